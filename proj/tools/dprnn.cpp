// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

// Command-line surface: synthetic corpus generation, training,
// retrieval evaluation, single-query retrieval, the finite-difference
// gradient suite and attention dumps.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dprnn/dprnn.hpp"

namespace {

using namespace dprnn;

struct ConfigFlags {
  std::string config_file;
  std::string profile;
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// Register the shared configuration flags on a subcommand. Every flag
/// name matches its config-file key; precedence is flag > file > default.
void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  // The config key "h" needs the long flag --h, so help is --help only.
  cmd->set_help_flag("--help", "print help");
  cmd->add_option("--config", flags.config_file,
                  "flat key=value configuration file");
  cmd->add_option("--profile", flags.profile,
                  "dataset profile (flickr30k | mscoco)");
  static const std::vector<std::string> keys{
      "h",     "q",          "k",          "dim",     "lambda1",
      "lambda2", "beta_w",   "beta_o",     "gamma",   "d",
      "lr",    "batch_size", "epochs",     "seed",    "objective",
      "use_rve", "grad_clip", "shuffle_block"};
  for (const std::string& key : keys) {
    cmd->add_option_function<std::string>(
        "--" + key,
        [&flags, key](const std::string& value) {
          flags.overrides.emplace_back(key, value);
        },
        "config key " + key);
  }
}

Config resolve_config(const ConfigFlags& flags) {
  Config cfg;
  if (!flags.config_file.empty()) cfg.load_file(flags.config_file);
  if (!flags.profile.empty()) cfg.set("profile", flags.profile);
  for (const auto& [key, value] : flags.overrides) cfg.set(key, value);
  return cfg;
}

EvalModel model_from_checkpoint(const LoadedCheckpoint& ckpt) {
  EvalModel m;
  m.params = &ckpt.params;
  m.objective = ckpt.config.objective_enum();
  m.rve_path = ckpt.config.use_rve ? RvePath::enabled : RvePath::skip;
  return m;
}

int cmd_synth(const SynthSpec& spec, const std::string& out_dir) {
  synth_generate(spec, out_dir);
  std::cout << "wrote dataset to " << out_dir << "\n";
  return 0;
}

int cmd_train(const ConfigFlags& flags, const std::string& manifest,
              const std::string& out_dir) {
  Config cfg = resolve_config(flags);
  Dataset ds = Dataset::load(manifest);
  auto pairs = ds.pairs("train");
  if (pairs.empty()) {
    throw ValidationError("train: the train split is empty");
  }
  std::vector<ImageInstance> images;
  std::vector<TextInstance> texts;
  images.reserve(pairs.size());
  texts.reserve(pairs.size());
  for (const auto& [img, txt] : pairs) {
    images.push_back(ds.images[img]);
    texts.push_back(ds.texts[txt]);
  }
  log_info("training on " + std::to_string(pairs.size()) + " pairs");
  TrainResult result = train(images, texts, ds.vocab.size(), cfg);

  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir + "/model.ckpt", result.params, cfg);
  std::ofstream log(out_dir + "/train_log.txt", std::ios::trunc);
  log << std::setprecision(10);
  for (const EpochLog& e : result.log) {
    log << "epoch=" << e.epoch << " lr=" << e.lr
        << " mean_loss=" << e.mean_loss << " batches=" << e.batches
        << " rve_invocations=" << e.rve_invocations
        << " missing_image_terms=" << e.missing_image_terms << "\n";
  }
  std::cout << "wrote " << out_dir << "/model.ckpt and train_log.txt\n";
  return 0;
}

int cmd_eval(const std::string& manifest, const std::string& ckpt_path,
             const std::string& ckpt2_path, const std::string& split,
             std::size_t folds, const std::string& out_path) {
  Dataset ds = Dataset::load(manifest);
  LoadedCheckpoint first = load_checkpoint(ckpt_path);
  std::vector<EvalModel> models{model_from_checkpoint(first)};
  LoadedCheckpoint second;
  if (!ckpt2_path.empty()) {
    second = load_checkpoint(ckpt2_path);
    models.push_back(model_from_checkpoint(second));
  }
  RecallReport report = evaluate(models, ds, split, folds);
  const std::string text = report.to_text();
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    out << text;
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_retrieve(const std::string& manifest, const std::string& ckpt_path,
                 const std::string& query, std::size_t top_k,
                 const std::string& split) {
  Dataset ds = Dataset::load(manifest);
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  std::vector<EvalModel> models{model_from_checkpoint(ckpt)};
  auto ranked = retrieve_top_k(models, ds, split, query, top_k);
  std::cout << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::cout << (i + 1) << " " << ranked[i].first << " " << ranked[i].second
              << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
  auto entries = run_gradcheck_suite(seed, tol);
  std::cout << std::scientific << std::setprecision(3);
  for (const SuiteEntry& e : entries) {
    std::cout << (e.pass ? "ok   " : "FAIL ") << e.name
              << " max_rel_err=" << e.max_rel_err << " coords=" << e.coords
              << "\n";
  }
  const bool ok = suite_passed(entries);
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_dump_attention(const std::string& manifest,
                       const std::string& ckpt_path,
                       const std::string& image_id,
                       const std::string& text_id,
                       const std::string& out_path) {
  Dataset ds = Dataset::load(manifest);
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const ImageInstance* image = nullptr;
  const TextInstance* text = nullptr;
  for (const ImageInstance& img : ds.images)
    if (img.id == image_id) image = &img;
  for (const TextInstance& txt : ds.texts)
    if (txt.id == text_id) text = &txt;
  if (image == nullptr || text == nullptr) {
    throw ValidationError("dump-attention: unknown pair ids '" + image_id +
                          "', '" + text_id + "'");
  }
  PairScore score = score_pair(
      nullptr, ckpt.params, *image, *text, ckpt.config.objective_enum(),
      ckpt.config.use_rve ? RvePath::enabled : RvePath::skip);
  if (out_path.empty()) {
    write_attention_dump(std::cout, image_id, text_id, score.sim,
                         score.reordering);
  } else {
    std::ofstream out(out_path, std::ios::trunc);
    write_attention_dump(out, image_id, text_id, score.sim, score.reordering);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dprnn: dual-path recurrent image-text matching engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthSpec spec;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--concepts", spec.concepts, "number of concepts");
  synth->add_option("--pairs", spec.pairs, "total image-text pairs");
  synth->add_option("--k", spec.k, "objects per image");
  synth->add_option("--n", spec.n, "maximum text length");
  synth->add_option("--dim", spec.dim, "descriptor width");
  synth->add_option("--noise", spec.noise, "noise / group spread");
  synth->add_option("--mode", spec.mode, "plain | order_sensitive");
  synth->add_option("--seed", spec.seed, "random seed");
  synth->add_option("--train-frac", spec.train_frac, "train split fraction");
  synth->add_option("--val-frac", spec.val_frac, "val split fraction");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigFlags train_flags;
  std::string train_data, train_out;
  train_cmd->add_option("--data", train_data, "dataset manifest")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  add_config_flags(train_cmd, train_flags);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate retrieval recall");
  std::string eval_data, eval_ckpt, eval_ckpt2, eval_split = "test",
                         eval_out;
  std::size_t eval_folds = 1;
  eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")
      ->required();
  eval_cmd->add_option("--checkpoint2", eval_ckpt2,
                       "second checkpoint for the two-model ensemble");
  eval_cmd->add_option("--split", eval_split, "dataset split");
  eval_cmd->add_option("--folds", eval_folds, "number of folds");
  eval_cmd->add_option("--out", eval_out, "report output file");

  // retrieve
  auto* retrieve_cmd =
      app.add_subcommand("retrieve", "top-K items for one query id");
  std::string ret_data, ret_ckpt, ret_query, ret_split = "test";
  std::size_t ret_topk = 10;
  retrieve_cmd->add_option("--data", ret_data, "dataset manifest")->required();
  retrieve_cmd->add_option("--checkpoint", ret_ckpt, "model checkpoint")
      ->required();
  retrieve_cmd->add_option("--query", ret_query, "image or text id")
      ->required();
  retrieve_cmd->add_option("--topk", ret_topk, "results to print");
  retrieve_cmd->add_option("--split", ret_split, "dataset split");

  // gradcheck
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t gc_seed = 1618;
  double gc_tol = 1e-4;
  gradcheck_cmd->add_option("--seed", gc_seed, "random seed");
  gradcheck_cmd->add_option("--tol", gc_tol, "relative error tolerance");

  // dump-attention
  auto* dump_cmd = app.add_subcommand(
      "dump-attention", "write attention matrices for one pair");
  std::string dump_data, dump_ckpt, dump_image, dump_text, dump_out;
  dump_cmd->add_option("--data", dump_data, "dataset manifest")->required();
  dump_cmd->add_option("--checkpoint", dump_ckpt, "model checkpoint")
      ->required();
  dump_cmd->add_option("--image", dump_image, "image id")->required();
  dump_cmd->add_option("--text", dump_text, "text id")->required();
  dump_cmd->add_option("--out", dump_out, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help
    }
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec, synth_out);
    if (train_cmd->parsed())
      return cmd_train(train_flags, train_data, train_out);
    if (eval_cmd->parsed())
      return cmd_eval(eval_data, eval_ckpt, eval_ckpt2, eval_split, eval_folds,
                      eval_out);
    if (retrieve_cmd->parsed())
      return cmd_retrieve(ret_data, ret_ckpt, ret_query, ret_topk, ret_split);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_tol);
    if (dump_cmd->parsed())
      return cmd_dump_attention(dump_data, dump_ckpt, dump_image, dump_text,
                                dump_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
