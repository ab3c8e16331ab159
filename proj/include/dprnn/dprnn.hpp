// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

#pragma once

#include "dprnn/checkpoint.hpp"
#include "dprnn/config.hpp"
#include "dprnn/data.hpp"
#include "dprnn/dump.hpp"
#include "dprnn/encoders.hpp"
#include "dprnn/error.hpp"
#include "dprnn/eval.hpp"
#include "dprnn/gradcheck.hpp"
#include "dprnn/gradcheck_suite.hpp"
#include "dprnn/log.hpp"
#include "dprnn/matching.hpp"
#include "dprnn/model.hpp"
#include "dprnn/ops.hpp"
#include "dprnn/rng.hpp"
#include "dprnn/rve.hpp"
#include "dprnn/synth.hpp"
#include "dprnn/tensor.hpp"
#include "dprnn/training.hpp"
