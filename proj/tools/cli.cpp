#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "msamseg/gradcheck.hpp"
#include "run_config.hpp"

namespace msamseg::cli {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::uint64_t seed = 1;
  std::string data;
  std::string out;

  // gen-data
  int patients = PhantomSpec{}.patients;
  int min_slices = PhantomSpec{}.slices_per_patient.min;
  int max_slices = PhantomSpec{}.slices_per_patient.max;

  // model / training
  std::string backbone = to_string(ModelConfig{}.backbone_input);
  std::string msam = to_string(ModelConfig{}.msam_input);
  std::size_t depth = ModelConfig{}.depth;
  std::size_t base_width = ModelConfig{}.base_width;
  std::size_t epochs = TrainConfig{}.epochs;
  std::size_t batch_size = TrainConfig{}.batch_size;
  std::size_t checkpoint_every = TrainConfig{}.checkpoint_every;
  double lr = TrainConfig{}.adam.lr;
  bool no_augment = false;
  std::string resume;

  // folds / evaluation
  std::size_t fold = 0;
  std::size_t folds = EvaluationSection{}.folds;
  std::string pooling = to_string(EvaluationSection{}.pooling);
  std::string checkpoint;
  std::string export_attention;
  std::string export_masks;
  std::string matrix = "single";

  // grad-check
  std::vector<std::string> ops;
  double tolerance = kGradCheckTolerance;
  std::size_t trials = 0;
};

// Options added to a subcommand, so that flags given on the command line can
// be told apart from defaults when layering them over the config file.
struct Registry {
  std::map<std::string, CLI::Option*> opts;
  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

void add_shared(CLI::App* cmd, Flags& f, Registry& r, const std::string& out_help) {
  r.opts["config"] = cmd->add_option("--config", f.config, "JSON run configuration, strict schema (default: none)");
  r.opts["seed"] = cmd->add_option("--seed", f.seed, "master seed")->capture_default_str();
  r.opts["data"] = cmd->add_option("--data", f.data, "dataset directory or manifest.json (default: data.path)");
  r.opts["out"] = cmd->add_option("--out", f.out, out_help);
}

void add_model(CLI::App* cmd, Flags& f, Registry& r) {
  r.opts["backbone"] = cmd->add_option("--backbone", f.backbone, "backbone input: CT, PET or PETCT")->capture_default_str();
  r.opts["msam"] = cmd->add_option("--msam", f.msam, "attention input: OFF, PET or PETCT")->capture_default_str();
  r.opts["depth"] = cmd->add_option("--depth", f.depth, "encoder depth")->capture_default_str();
  r.opts["base-width"] = cmd->add_option("--base-width", f.base_width, "channels of the first stage")->capture_default_str();
}

void add_training(CLI::App* cmd, Flags& f, Registry& r) {
  r.opts["epochs"] = cmd->add_option("--epochs", f.epochs, "training epochs")->capture_default_str();
  r.opts["batch-size"] = cmd->add_option("--batch-size", f.batch_size, "minibatch size")->capture_default_str();
  r.opts["lr"] = cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  r.opts["no-augment"] = cmd->add_flag("--no-augment", f.no_augment, "disable flip/rotation augmentation (default: on)");
}

void add_folds(CLI::App* cmd, Flags& f, Registry& r) {
  r.opts["folds"] = cmd->add_option("--folds", f.folds, "number of cross-validation folds")->capture_default_str();
  r.opts["pooling"] =
      cmd->add_option("--pooling", f.pooling, "metric pooling: per_slice or global_pixel")->capture_default_str();
}

RunConfig layered(const Flags& f, const Registry& r) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (r.given("data")) c.data_path = f.data;
  if (r.given("backbone")) c.model.backbone_input = parse_backbone_input(f.backbone);
  if (r.given("msam")) c.model.msam_input = parse_msam_input(f.msam);
  if (r.given("depth")) c.model.depth = f.depth;
  if (r.given("base-width")) c.model.base_width = f.base_width;
  if (r.given("epochs")) c.training.epochs = f.epochs;
  if (r.given("batch-size")) c.training.batch_size = f.batch_size;
  if (r.given("lr")) c.training.adam.lr = f.lr;
  if (r.given("no-augment")) c.training.augment = false;
  if (r.given("checkpoint-every")) c.training.checkpoint_every = f.checkpoint_every;
  if (r.given("seed")) {
    c.training.seed = f.seed;
    c.phantom.seed = f.seed;
  }
  if (r.given("patients")) c.phantom.patients = f.patients;
  if (r.given("min-slices")) c.phantom.slices_per_patient.min = f.min_slices;
  if (r.given("max-slices")) c.phantom.slices_per_patient.max = f.max_slices;
  if (r.given("folds")) c.evaluation.folds = f.folds;
  if (r.given("pooling")) c.evaluation.pooling = parse_pooling(f.pooling);
  c.model.validate();
  c.training.validate();
  if (c.evaluation.folds < 2) throw ConfigError("--folds must be at least 2");
  return c;
}

Dataset open_dataset(const RunConfig& c, const ModelConfig& model) {
  if (!c.data_path) throw ConfigError("no dataset given (use --data or data.path)");
  Dataset ds = load_dataset(*c.data_path);
  if (ds.height != model.height || ds.width != model.width) {
    throw ConfigError("dataset is " + std::to_string(ds.height) + "x" + std::to_string(ds.width) + " but the model expects " +
                      std::to_string(model.height) + "x" + std::to_string(model.width));
  }
  return ds;
}

FoldSplit fold_of(const Dataset& ds, std::size_t k, std::uint64_t seed, std::size_t fold) {
  const auto folds = make_folds(ds.patient_ids(), k, seed);
  if (fold >= folds.size()) throw ConfigError("--fold must be below " + std::to_string(folds.size()));
  return folds[fold];
}

std::string fmt_metrics(const Metrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "precision %.4f  sensitivity %.4f  specificity %.4f  dsc %.4f", m.precision,
                m.sensitivity, m.specificity, m.dsc);
  return buf;
}

int cmd_gen_data(const Flags& f, const Registry& r) {
  RunConfig c = layered(f, r);
  if (f.out.empty()) throw ConfigError("gen-data requires --out");
  c.phantom.validate();
  const fs::path manifest = generate_phantoms(c.phantom, f.out);
  const Dataset ds = load_dataset(manifest);
  std::size_t slices = 0, hot = 0;
  for (const auto& p : ds.patients) {
    slices += p.slices.size();
    for (const auto& s : p.slices) {
      if (s.hotspots) {
        const auto h = s.hotspots->data();
        hot += std::any_of(h.begin(), h.end(), [](float v) { return v > 0.5f; }) ? 1 : 0;
      }
    }
  }
  std::cout << "manifest: " << manifest.string() << "\n"
            << "patients: " << ds.patients.size() << "  slices: " << slices << "  slices with benign hotspots: " << hot
            << "\n";
  return 0;
}

int cmd_train(const Flags& f, const Registry& r) {
  const RunConfig c = layered(f, r);
  const Dataset ds = open_dataset(c, c.model);
  const FoldSplit fold = fold_of(ds, c.evaluation.folds, c.training.seed, f.fold);
  TrainConfig tc = c.training;
  tc.seed = fold_training_seed(c.training.seed, fold.fold);
  const fs::path out = f.out.empty() ? fs::path("run") : fs::path(f.out);
  fs::create_directories(out);
  TrainHooks hooks;
  hooks.checkpoint_dir = out;
  hooks.on_epoch = [&](std::size_t epoch, const Checkpoint&) {
    if (epoch % 10 == 0 || epoch == tc.epochs) std::cerr << "epoch " << epoch << "/" << tc.epochs << "\n";
  };
  TrainResult result = f.resume.empty() ? train(c.model, tc, ds, fold, hooks)
                                        : resume(load_checkpoint(f.resume), tc, ds, fold, hooks);
  std::vector<EpochLoss> log = result.log;
  const fs::path log_path = out / "loss.csv";
  if (!f.resume.empty() && fs::exists(log_path)) {
    // Append to the log of the interrupted run, keeping its earlier epochs.
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    std::vector<EpochLoss> previous;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      const std::size_t e = std::stoul(line.substr(0, comma));
      if (e < log.front().epoch) previous.push_back({e, std::stod(line.substr(comma + 1))});
    }
    previous.insert(previous.end(), log.begin(), log.end());
    log = previous;
  }
  write_loss_log(log_path, log);
  std::ofstream(out / "config.json") << run_config_to_json(c);
  std::cout << "model: " << c.model.label() << "  fold " << fold.fold << "/" << c.evaluation.folds
            << "  training slices from " << fold.train_ids.size() << " patients\n"
            << "loss: " << log.front().mean_loss << " (epoch " << log.front().epoch << ") -> " << log.back().mean_loss
            << " (epoch " << log.back().epoch << ")\n"
            << "checkpoint: " << (out / "final.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const Flags& f, const Registry& r) {
  const RunConfig c = layered(f, r);
  if (f.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  const Checkpoint ckpt = load_checkpoint(f.checkpoint);
  const Dataset ds = open_dataset(c, ckpt.config);
  const FoldSplit fold = fold_of(ds, c.evaluation.folds, c.training.seed, f.fold);
  const FoldStats stats = compute_fold_stats(filter_tumor_slices(ds.slices_of(fold.train_ids)), fold.train_hash());
  if (stats.fold_hash != ckpt.meta.stats.fold_hash) {
    throw ConfigError("checkpoint was trained on a different fold split (check --seed, --folds and --fold)");
  }

  bool export_att = !f.export_attention.empty();
  if (export_att && !ckpt.config.msam_enabled()) {
    std::cout << "no attention to export: " << ckpt.config.label() << " has no attention subnetwork\n";
    export_att = false;
  }
  EvalOptions eo;
  eo.pooling = c.evaluation.pooling;
  eo.batch_size = c.training.batch_size;
  std::size_t exported = 0;
  if (export_att || !f.export_masks.empty()) {
    eo.on_slice = [&](const SliceTriplet& t, const Tensor<float>& pred, const Tensor<float>* attention) {
      if (export_att && attention) {
        export_attention(*attention, fs::path(f.export_attention) / export_name(t.patient_id, t.slice_index, "attention"));
        ++exported;
      }
      if (!f.export_masks.empty()) {
        export_mask(pred, fs::path(f.export_masks) / export_name(t.patient_id, t.slice_index, "pred"));
        export_mask(t.mask, fs::path(f.export_masks) / export_name(t.patient_id, t.slice_index, "gt"));
      }
    };
  }
  const FoldEvaluation ev = evaluate(ckpt, ds.slices_of(fold.test_ids), stats, eo);
  MetricsReport report;
  report.rows.push_back({ckpt.config.label(), std::to_string(fold.fold), ev.metrics});
  const fs::path out = f.out.empty() ? fs::path(c.evaluation.report) : fs::path(f.out);
  write_report_csv(out, report);
  std::cout << ckpt.config.label() << "  fold " << fold.fold << "  " << ev.slices.size() << " test slices\n"
            << fmt_metrics(ev.metrics) << "\n"
            << "report: " << out.string() << "\n";
  if (export_att) std::cout << "attention maps exported: " << exported << " -> " << f.export_attention << "\n";
  return 0;
}

int cmd_xval(const Flags& f, const Registry& r) {
  const RunConfig c = layered(f, r);
  std::vector<ModelConfig> configs;
  if (f.matrix == "table1") configs = table1_matrix(c.model);
  else if (f.matrix == "single") configs = {c.model};
  else throw ConfigError("unknown --matrix '" + f.matrix + "' (expected single or table1)");
  const Dataset ds = open_dataset(c, c.model);
  const fs::path out = f.out.empty() ? fs::path("xval") : fs::path(f.out);
  fs::create_directories(out);

  CrossValidationOptions opts;
  opts.k = c.evaluation.folds;
  opts.pooling = c.evaluation.pooling;
  opts.checkpoint_dir = out / "checkpoints";
  const auto start = std::chrono::steady_clock::now();
  opts.on_fold = [&](const ModelConfig& m, std::size_t fold, const FoldEvaluation& ev) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "%-26s fold %zu  dsc %.4f  (%.0f s)\n", m.label().c_str(), fold, ev.metrics.dsc, s);
  };
  const MetricsReport report = cross_validate(configs, c.training, ds, c.training.seed, opts);
  write_report_csv(out / c.evaluation.report, report);
  write_report_summary(out / c.evaluation.summary, report);
  const std::string table = format_comparison_table(report);
  std::ofstream(out / "table.txt") << table;
  std::cout << table << "report: " << (out / c.evaluation.report).string() << "\n";
  return 0;
}

int cmd_grad_check(const Flags& f, const Registry&) {
  std::vector<std::string> ops = f.ops.empty() ? gradcheck_ops() : f.ops;
  std::vector<std::string> failed;
  for (const auto& op : ops) {
    const GradCheckReport rep = gradient_check(op, f.tolerance, f.seed, f.trials);
    std::printf("%-22s %s  trials %zu  elements %zu  max rel error %.3e\n", op.c_str(), rep.passed ? "PASS" : "FAIL",
                rep.trials, rep.elements, rep.max_rel_error);
    if (!rep.passed) {
      failed.push_back(op);
      std::printf("  worst: %s\n", rep.worst.c_str());
    }
  }
  if (!failed.empty()) {
    std::string list;
    for (const auto& op : failed) list += (list.empty() ? "" : ", ") + op;
    std::printf("gradient check FAILED at tolerance %.1e: %s\n", f.tolerance, list.c_str());
    return 1;
  }
  std::printf("gradient check passed (%zu ops, tolerance %.1e)\n", ops.size(), f.tolerance);
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"msamseg: PET-CT tumour segmentation with multimodal spatial attention"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  Flags f;
  Registry rg, rt, re, rx, rc;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic PET-CT phantom dataset");
  add_shared(gen, f, rg, "dataset directory to create (required)");
  rg.opts["patients"] = gen->add_option("--patients", f.patients, "number of patients")->capture_default_str();
  rg.opts["min-slices"] = gen->add_option("--min-slices", f.min_slices, "minimum slices per patient")->capture_default_str();
  rg.opts["max-slices"] = gen->add_option("--max-slices", f.max_slices, "maximum slices per patient")->capture_default_str();

  auto* tr = app.add_subcommand("train", "train one model on one cross-validation fold");
  add_shared(tr, f, rt, "output directory (default: run)");
  add_model(tr, f, rt);
  add_training(tr, f, rt);
  add_folds(tr, f, rt);
  rt.opts["fold"] = tr->add_option("--fold", f.fold, "fold to train on")->capture_default_str();
  rt.opts["checkpoint-every"] =
      tr->add_option("--checkpoint-every", f.checkpoint_every, "epochs between periodic checkpoints (0 = final only)")
          ->capture_default_str();
  tr->add_option("--resume", f.resume, "continue from a checkpoint with optimizer state (default: none)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on its fold's test patients");
  add_shared(ev, f, re, "report CSV path (default: evaluation.report)");
  add_folds(ev, f, re);
  re.opts["fold"] = ev->add_option("--fold", f.fold, "fold the checkpoint was trained on")->capture_default_str();
  ev->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  ev->add_option("--export-attention", f.export_attention, "directory for attention maps as PGM (default: none)");
  ev->add_option("--export-masks", f.export_masks, "directory for predicted and reference masks as PGM (default: none)");

  auto* xv = app.add_subcommand("xval", "k-fold cross-validation over one or more configurations");
  add_shared(xv, f, rx, "output directory (default: xval)");
  add_model(xv, f, rx);
  add_training(xv, f, rx);
  add_folds(xv, f, rx);
  xv->add_option("--matrix", f.matrix, "single (the configured model) or table1 (eight-row ablation)")
      ->capture_default_str();

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every differentiable operation");
  gc->add_option("--seed", f.seed, "trial seed")->capture_default_str();
  gc->add_option("--ops", f.ops, "restrict to these operations, comma separated (default: all)")->delimiter(',');
  gc->add_option("--tolerance", f.tolerance, "maximum relative error")->capture_default_str();
  gc->add_option("--trials", f.trials, "trials per operation (0 = 10 per op, 3 for the model)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*gen) return cmd_gen_data(f, rg);
    if (*tr) return cmd_train(f, rt);
    if (*ev) return cmd_eval(f, re);
    if (*xv) return cmd_xval(f, rx);
    if (*gc) return cmd_grad_check(f, rc);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace msamseg::cli
