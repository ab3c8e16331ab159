// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dprnn/data.hpp"
#include "dprnn/dump.hpp"
#include "dprnn/eval.hpp"
#include "dprnn/synth.hpp"

using namespace dprnn;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const std::string dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ImageInstance random_instance(std::size_t k, std::size_t d, Rng& rng) {
  std::vector<double> desc(k * d), boxes(k * 4);
  for (double& x : desc) x = rng.uniform(-2.0, 2.0);
  for (double& x : boxes) x = rng.uniform();
  ImageInstance img;
  img.id = "img";
  img.descriptors = Tensor(Shape{k, d}, std::move(desc));
  img.boxes = Tensor(Shape{k, 4}, std::move(boxes));
  return img;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

TEST(FeatureFile, RoundTripBitwise) {
  Rng rng(3);
  const std::string dir = temp_dir("dprnn_feat");
  ImageInstance img = random_instance(5, 7, rng);
  const std::string p1 = dir + "/a.feat", p2 = dir + "/b.feat";
  save_features(img, p1);
  ImageInstance loaded = load_features(p1);
  save_features(loaded, p2);
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));
  EXPECT_EQ(loaded.descriptors.shape(), img.descriptors.shape());
  EXPECT_EQ(loaded.id, "a");
}

TEST(FeatureFile, SizeFormula) {
  Rng rng(5);
  const std::string dir = temp_dir("dprnn_feat_size");
  ImageInstance img = random_instance(36, 2048, rng);
  const std::string path = dir + "/big.feat";
  save_features(img, path);
  EXPECT_EQ(fs::file_size(path), 16u + 36u * 2052u * 4u);
  EXPECT_EQ(feature_file_size(36, 2048), 16u + 36u * 2052u * 4u);
}

TEST(FeatureFile, TypedLoadErrors) {
  Rng rng(7);
  const std::string dir = temp_dir("dprnn_feat_err");
  ImageInstance img = random_instance(3, 4, rng);
  const std::string path = dir + "/x.feat";
  save_features(img, path);
  std::string bytes = file_bytes(path);

  auto fault_of = [&](std::string data) {
    const std::string broken = dir + "/broken.feat";
    std::ofstream out(broken, std::ios::binary | std::ios::trunc);
    out.write(data.data(), std::streamsize(data.size()));
    out.close();
    try {
      load_features(broken);
      return FormatFault::malformed;
    } catch (const FormatError& e) {
      return e.fault();
    }
  };

  std::string bad_magic = bytes;
  bad_magic[3] = 'x';
  EXPECT_EQ(fault_of(bad_magic), FormatFault::bad_magic);

  std::string bad_version = bytes;
  bad_version[8] = 7;
  EXPECT_EQ(fault_of(bad_version), FormatFault::bad_version);

  std::string truncated = bytes.substr(0, bytes.size() - 5);
  try {
    fs::path broken = fs::path(dir) / "trunc.feat";
    std::ofstream out(broken, std::ios::binary);
    out.write(truncated.data(), std::streamsize(truncated.size()));
    out.close();
    load_features(broken.string());
    FAIL() << "expected truncation error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.fault(), FormatFault::truncated);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected"), std::string::npos);
    EXPECT_NE(msg.find(std::to_string(bytes.size())), std::string::npos);
  }

  // Box coordinate pushed outside [0,1]: payload floats start at 16 and
  // boxes live after the 3*4 descriptor floats.
  std::string bad_box = bytes;
  const float big = 1.25f;
  std::memcpy(bad_box.data() + 16 + (3 * 4) * 4, &big, 4);
  EXPECT_EQ(fault_of(bad_box), FormatFault::value_out_of_range);
}

TEST(FeatureFile, SaveRejectsBadBoxes) {
  Rng rng(11);
  ImageInstance img = random_instance(2, 3, rng);
  std::vector<double> boxes = img.boxes.values();
  boxes[1] = -0.5;
  img.boxes = Tensor(Shape{2, 4}, std::move(boxes));
  EXPECT_THROW(save_features(img, "/tmp/should_not_exist.feat"),
               ValidationError);
}

// ---------------------------------------------------------------------------
// Manifest and dataset loading
// ---------------------------------------------------------------------------

TEST(Manifest, RejectsDanglingReferences) {
  const std::string dir = temp_dir("dprnn_manifest");
  std::ofstream(dir + "/vocab.txt") << "a\nb\n";
  std::ofstream(dir + "/captions.txt") << "t0 a b\n";
  std::ofstream(dir + "/manifest.txt")
      << "vocab vocab.txt\ncaptions captions.txt\n"
      << "image img0 features/img0.feat train t0\n";
  EXPECT_THROW(DatasetManifest::load(dir + "/manifest.txt"), FormatError);
}

TEST(Manifest, RejectsImageWithoutTexts) {
  const std::string dir = temp_dir("dprnn_manifest2");
  std::ofstream(dir + "/vocab.txt") << "a\n";
  std::ofstream(dir + "/captions.txt") << "t0 a\n";
  std::ofstream(dir + "/manifest.txt")
      << "vocab vocab.txt\ncaptions captions.txt\n"
      << "image img0 img0.feat train\n";
  EXPECT_THROW(DatasetManifest::load(dir + "/manifest.txt"), FormatError);
}

TEST(Dataset, LoadsSynthCorpus) {
  const std::string dir = temp_dir("dprnn_ds");
  SynthSpec spec;
  spec.concepts = 5;
  spec.pairs = 20;
  spec.k = 3;
  spec.n = 5;
  spec.dim = 6;
  spec.noise = 0.1;
  spec.seed = 21;
  synth_generate(spec, dir);
  Dataset ds = Dataset::load(dir + "/manifest.txt");
  EXPECT_EQ(ds.images.size(), 20u);
  EXPECT_EQ(ds.texts.size(), 20u);
  EXPECT_EQ(ds.images_in("train").size(), 16u);
  EXPECT_EQ(ds.images_in("val").size(), 2u);
  EXPECT_EQ(ds.images_in("test").size(), 2u);
  for (std::size_t img = 0; img < ds.images.size(); ++img) {
    ASSERT_EQ(ds.texts_of_image[img].size(), 1u);
    EXPECT_EQ(ds.image_of_text[ds.texts_of_image[img][0]], img);
    EXPECT_EQ(ds.images[img].descriptors.rows(), 3u);
    EXPECT_EQ(ds.images[img].descriptors.cols(), 6u);
  }
  for (const TextInstance& t : ds.texts) {
    EXPECT_GE(t.tokens.size(), 1u);
    EXPECT_LE(t.tokens.size(), 5u);
    for (std::size_t tok : t.tokens) EXPECT_LT(tok, ds.vocab.size());
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

TEST(Synth, SameSeedBitwiseIdenticalTrees) {
  SynthSpec spec;
  spec.concepts = 4;
  spec.pairs = 12;
  spec.k = 4;
  spec.n = 6;
  spec.dim = 5;
  spec.mode = "order_sensitive";
  spec.noise = 0.3;
  spec.seed = 77;
  const std::string d1 = temp_dir("dprnn_synth_a");
  const std::string d2 = temp_dir("dprnn_synth_b");
  synth_generate(spec, d1);
  synth_generate(spec, d2);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), d1).string();
    EXPECT_EQ(file_bytes(entry.path().string()), file_bytes(d1 + "/" + rel));
    EXPECT_EQ(file_bytes(entry.path().string()), file_bytes(d2 + "/" + rel))
        << rel;
  }
}

TEST(Synth, ZeroNoisePlainObjectsSitOnCentroids) {
  SynthSpec spec;
  spec.concepts = 6;
  spec.pairs = 15;
  spec.k = 4;
  spec.n = 6;
  spec.dim = 5;
  spec.noise = 0.0;
  spec.seed = 13;
  const std::string dir = temp_dir("dprnn_synth_zero");
  synth_generate(spec, dir);
  Dataset ds = Dataset::load(dir + "/manifest.txt");
  // With zero noise every object equals its concept centroid, so the
  // dataset contains at most `concepts` distinct descriptor rows and
  // every image at most min(4, k, n) distinct rows.
  std::set<std::vector<double>> all_rows;
  for (const ImageInstance& img : ds.images) {
    std::set<std::vector<double>> rows;
    for (std::size_t i = 0; i < img.descriptors.rows(); ++i) {
      std::vector<double> row(5);
      for (std::size_t t = 0; t < 5; ++t) row[t] = img.descriptors.at(i, t);
      rows.insert(row);
      all_rows.insert(row);
    }
    EXPECT_LE(rows.size(), 4u);
  }
  EXPECT_LE(all_rows.size(), 6u);
}

TEST(Synth, OrderSensitiveTwinsShareTokenMultisets) {
  SynthSpec spec;
  spec.concepts = 6;
  spec.pairs = 20;
  spec.k = 4;
  spec.n = 7;
  spec.dim = 5;
  spec.mode = "order_sensitive";
  spec.noise = 0.4;
  spec.seed = 31;
  const std::string dir = temp_dir("dprnn_synth_twins");
  synth_generate(spec, dir);
  Dataset ds = Dataset::load(dir + "/manifest.txt");
  ASSERT_EQ(ds.images.size() % 2, 0u);
  for (std::size_t b = 0; b < ds.images.size(); b += 2) {
    // Twin texts: identical token multisets.
    std::vector<std::size_t> t1 = ds.texts[ds.texts_of_image[b][0]].tokens;
    std::vector<std::size_t> t2 = ds.texts[ds.texts_of_image[b + 1][0]].tokens;
    std::sort(t1.begin(), t1.end());
    std::sort(t2.begin(), t2.end());
    EXPECT_EQ(t1, t2);

    // Twin images: same concept multiset but different group counts.
    auto distinct_rows = [](const ImageInstance& img) {
      std::set<std::vector<double>> rows;
      for (std::size_t i = 0; i < img.descriptors.rows(); ++i) {
        std::vector<double> row(img.descriptors.cols());
        for (std::size_t t = 0; t < row.size(); ++t)
          row[t] = img.descriptors.at(i, t);
        rows.insert(row);
      }
      return rows.size();
    };
    EXPECT_EQ(distinct_rows(ds.images[b]), 2u);      // grouped: k/2 groups
    EXPECT_EQ(distinct_rows(ds.images[b + 1]), 4u);  // apart: k singletons
  }
}

TEST(Synth, ConceptBudgetEnforced) {
  SynthSpec spec;
  spec.concepts = 100000;
  EXPECT_THROW(synth_generate(spec, temp_dir("dprnn_synth_budget")),
               ValidationError);
}

// ---------------------------------------------------------------------------
// Recall
// ---------------------------------------------------------------------------

TEST(Recall, DominantDiagonal) {
  std::vector<std::vector<double>> sim(4, std::vector<double>(4, 0.1));
  for (int i = 0; i < 4; ++i) sim[i][i] = 0.9;
  std::vector<std::vector<std::size_t>> truth{{0}, {1}, {2}, {3}};
  EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, 1), 100.0);
}

TEST(Recall, HandRankCounts) {
  // Four queries with the correct item at ranks 1, 2, 6 and 11 of 12.
  const std::size_t n = 12;
  std::vector<std::vector<double>> sim(4, std::vector<double>(n, 0.0));
  std::vector<std::vector<std::size_t>> truth(4, std::vector<std::size_t>{11});
  auto plant = [&](std::size_t q, std::size_t rank) {
    // Candidate 11 is correct; candidates 0..rank-2 strictly beat it.
    for (std::size_t c = 0; c + 1 < rank; ++c) sim[q][c] = 1.0 - 0.01 * double(c);
    sim[q][11] = 0.5;
  };
  plant(0, 1);
  plant(1, 2);
  plant(2, 6);
  plant(3, 11);
  EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, 1), 25.0);
  EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, 5), 50.0);
  EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, 10), 75.0);
}

TEST(Recall, FullWindowAlwaysHits) {
  Rng rng(41);
  std::vector<std::vector<double>> sim(10, std::vector<double>(10));
  std::vector<std::vector<std::size_t>> truth(10);
  for (std::size_t q = 0; q < 10; ++q) {
    truth[q] = {9 - q};
    for (std::size_t c = 0; c < 10; ++c) sim[q][c] = rng.uniform();
  }
  EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, 10), 100.0);
}

TEST(Recall, InvariantUnderMonotoneTransform) {
  Rng rng(43);
  std::vector<std::vector<double>> sim(6, std::vector<double>(8));
  std::vector<std::vector<std::size_t>> truth(6);
  for (std::size_t q = 0; q < 6; ++q) {
    truth[q] = {rng.index(8)};
    for (std::size_t c = 0; c < 8; ++c) sim[q][c] = rng.uniform(-1.0, 1.0);
  }
  std::vector<std::vector<double>> warped = sim;
  for (auto& row : warped)
    for (double& v : row) v = std::exp(3.0 * v) + 7.0;
  for (std::size_t K : {1, 3, 5, 8}) {
    EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, K), recall_at_k(warped, truth, K));
  }
}

TEST(Recall, OversizedKClamps) {
  std::vector<std::vector<double>> sim{{0.3, 0.1}};
  std::vector<std::vector<std::size_t>> truth{{1}};
  EXPECT_DOUBLE_EQ(recall_at_k(sim, truth, 50), 100.0);
}

TEST(Recall, MissingTruthIsError) {
  std::vector<std::vector<double>> sim{{0.3, 0.1}};
  std::vector<std::vector<std::size_t>> truth{{}};
  EXPECT_THROW(recall_at_k(sim, truth, 1), ValidationError);
}

// ---------------------------------------------------------------------------
// Evaluation and reports
// ---------------------------------------------------------------------------

namespace {

/// Small trained-free evaluation fixture: random params over a small
/// synth corpus.
struct EvalFixture {
  std::string dir;
  Dataset ds;
  Config cfg;
  ModelParams params;

  EvalFixture() : dir(temp_dir("dprnn_eval_fixture")) {
    SynthSpec spec;
    spec.concepts = 4;
    spec.pairs = 20;
    spec.k = 2;
    spec.n = 4;
    spec.dim = 5;
    spec.noise = 0.05;
    spec.seed = 51;
    spec.train_frac = 0.0;
    spec.val_frac = 0.0;  // everything in test
    synth_generate(spec, dir);
    ds = Dataset::load(dir + "/manifest.txt");
    cfg.h = 5;
    cfg.q = 4;
    cfg.k = 2;
    cfg.dim = 5;
    Rng rng(61);
    params = ModelParams::init(cfg, ds.vocab.size(), rng);
  }
};

}  // namespace

TEST(Evaluate, SingleFoldEqualsMeanAndEnsembleOfIdenticalModels) {
  EvalFixture fx;
  std::vector<EvalModel> one{{&fx.params, Objective::ensemble, RvePath::enabled}};
  RecallReport r1 = evaluate(one, fx.ds, "test", 1);
  ASSERT_EQ(r1.folds.size(), 1u);
  EXPECT_DOUBLE_EQ(r1.mean.img_r1, r1.folds[0].img_r1);
  EXPECT_DOUBLE_EQ(r1.mean.sent_r10, r1.folds[0].sent_r10);
  EXPECT_LE(r1.mean.img_r1, r1.mean.img_r5);
  EXPECT_LE(r1.mean.img_r5, r1.mean.img_r10);
  EXPECT_LE(r1.mean.sent_r1, r1.mean.sent_r5);

  std::vector<EvalModel> two{{&fx.params, Objective::ensemble, RvePath::enabled},
                             {&fx.params, Objective::ensemble, RvePath::enabled}};
  RecallReport r2 = evaluate(two, fx.ds, "test", 1);
  EXPECT_DOUBLE_EQ(r2.mean.img_r1, r1.mean.img_r1);
  EXPECT_DOUBLE_EQ(r2.mean.sent_r1, r1.mean.sent_r1);
}

TEST(Evaluate, FoldAveragingMatchesHandMean) {
  EvalFixture fx;
  std::vector<EvalModel> models{
      {&fx.params, Objective::ensemble, RvePath::enabled}};
  RecallReport r = evaluate(models, fx.ds, "test", 4);  // 5 images per fold
  ASSERT_EQ(r.folds.size(), 4u);
  double mean = 0.0;
  for (const FoldRecall& f : r.folds) mean += f.img_r1;
  EXPECT_NEAR(r.mean.img_r1, mean / 4.0, 1e-12);
}

TEST(Evaluate, SingleCandidatePerQueryIsPerfect) {
  EvalFixture fx;
  std::vector<EvalModel> models{
      {&fx.params, Objective::ensemble, RvePath::enabled}};
  // 20 folds of one image each: R@1 must be 100 in both directions.
  RecallReport r = evaluate(models, fx.ds, "test", 20);
  EXPECT_DOUBLE_EQ(r.mean.img_r1, 100.0);
  EXPECT_DOUBLE_EQ(r.mean.sent_r1, 100.0);
}

TEST(Evaluate, ReportFormatIsParseable) {
  RecallReport r;
  r.queries_sentence = 10;
  r.queries_image = 10;
  r.folds = {{60.0, 70.0, 80.0, 50.0, 60.0, 70.0},
             {62.0, 72.0, 82.0, 52.0, 62.0, 72.0}};
  r.mean = {61.0, 71.0, 81.0, 51.0, 61.0, 71.0};
  const std::string text = r.to_text();
  EXPECT_NE(text.find("queries_sentence=10"), std::string::npos);
  EXPECT_NE(text.find("folds=2"), std::string::npos);
  EXPECT_NE(text.find("fold=1 sent_r1=60.000000"), std::string::npos);
  EXPECT_NE(text.find("mean sent_r1=61.000000"), std::string::npos);
  EXPECT_NE(text.find("img_r10=72.000000"), std::string::npos);
}

TEST(Retrieve, TopKInBothDirections) {
  EvalFixture fx;
  std::vector<EvalModel> models{
      {&fx.params, Objective::ensemble, RvePath::enabled}};
  auto by_image =
      retrieve_top_k(models, fx.ds, "test", fx.ds.images[0].id, 5);
  EXPECT_EQ(by_image.size(), 5u);
  for (std::size_t i = 1; i < by_image.size(); ++i)
    EXPECT_GE(by_image[i - 1].second, by_image[i].second);
  auto by_text = retrieve_top_k(models, fx.ds, "test", fx.ds.texts[0].id, 3);
  EXPECT_EQ(by_text.size(), 3u);
  EXPECT_THROW(retrieve_top_k(models, fx.ds, "test", "nope", 3),
               ValidationError);
}

// ---------------------------------------------------------------------------
// Attention dump
// ---------------------------------------------------------------------------

TEST(AttentionDump, FormatAndPrecision) {
  EvalFixture fx;
  Tape tape;
  PairScore score =
      score_pair(nullptr, fx.params, fx.ds.images[0],
                 fx.ds.texts[fx.ds.texts_of_image[0][0]], Objective::ensemble,
                 RvePath::enabled);
  std::ostringstream os;
  write_attention_dump(os, fx.ds.images[0].id,
                       fx.ds.texts[fx.ds.texts_of_image[0][0]].id, score.sim,
                       score.reordering);
  const std::string text = os.str();
  EXPECT_NE(text.find("pair image=img0 text=txt0"), std::string::npos);
  EXPECT_NE(text.find("alpha_dual rows="), std::string::npos);
  EXPECT_NE(text.find("word_weights:"), std::string::npos);
  EXPECT_NE(text.find("reordering slots=2"), std::string::npos);
  EXPECT_NE(text.find("slot=0 object="), std::string::npos);

  // Six decimal places on every matrix entry.
  std::istringstream is(text);
  std::string line;
  bool in_matrix = false;
  while (std::getline(is, line)) {
    if (line.rfind("alpha_dual", 0) == 0) {
      in_matrix = true;
      continue;
    }
    if (line.rfind("reordering", 0) == 0) in_matrix = false;
    if (in_matrix) {
      std::istringstream ls(line);
      std::string cell;
      while (ls >> cell) {
        const auto dot_pos = cell.find('.');
        ASSERT_NE(dot_pos, std::string::npos) << cell;
        EXPECT_EQ(cell.size() - dot_pos - 1, 6u) << cell;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Config precedence
// ---------------------------------------------------------------------------

TEST(Config, DefaultsMatchPublishedOperatingPoint) {
  Config cfg;
  EXPECT_EQ(cfg.h, 1024u);
  EXPECT_EQ(cfg.q, 300u);
  EXPECT_EQ(cfg.k, 36u);
  EXPECT_DOUBLE_EQ(cfg.lambda1, 9.0);
  EXPECT_DOUBLE_EQ(cfg.lambda2, 4.0);
  EXPECT_DOUBLE_EQ(cfg.beta_w, 0.3);
  EXPECT_DOUBLE_EQ(cfg.beta_o, 0.3);
  EXPECT_DOUBLE_EQ(cfg.gamma, 0.2);
  EXPECT_EQ(cfg.d, 10u);
  EXPECT_EQ(cfg.batch_size, 128u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.0002);
}

TEST(Config, ProfileSwitchesDatasetDefaults) {
  Config cfg;
  cfg.set("profile", "mscoco");
  EXPECT_DOUBLE_EQ(cfg.lr, 0.0005);
  EXPECT_DOUBLE_EQ(cfg.beta_o, 0.0);
  cfg.set("profile", "flickr30k");
  EXPECT_DOUBLE_EQ(cfg.lr, 0.0002);
  EXPECT_DOUBLE_EQ(cfg.beta_o, 0.3);
  EXPECT_THROW(cfg.set("profile", "imagenet"), ValidationError);
}

TEST(Config, FileThenFlagPrecedence) {
  const std::string dir = temp_dir("dprnn_cfg");
  std::ofstream(dir + "/run.cfg") << "# comment\nprofile=mscoco\ngamma=0.3\n"
                                  << "lambda1=5\n";
  Config cfg;            // built-in defaults
  cfg.load_file(dir + "/run.cfg");  // config file overrides
  EXPECT_DOUBLE_EQ(cfg.gamma, 0.3);
  EXPECT_DOUBLE_EQ(cfg.lambda1, 5.0);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.0005);  // from the mscoco profile
  cfg.set("gamma", "0.25");          // flag overrides the file
  EXPECT_DOUBLE_EQ(cfg.gamma, 0.25);
  EXPECT_THROW(cfg.set("unknown_key", "1"), ValidationError);
}

TEST(Config, TextRoundTrip) {
  Config cfg;
  cfg.set("h", "64");
  cfg.set("lr", "0.00123");
  cfg.set("objective", "object");
  cfg.set("use_rve", "0");
  Config back = Config::from_text(cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_EQ(back.h, 64u);
  EXPECT_DOUBLE_EQ(back.lr, 0.00123);
  EXPECT_EQ(back.objective, "object");
  EXPECT_FALSE(back.use_rve);
}
