#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "draw.hpp"
#include "kwspot/datamodel.hpp"
#include "kwspot/errors.hpp"
#include "kwspot/evalkit.hpp"
#include "kwspot/fsutil.hpp"
#include "kwspot/network.hpp"
#include "kwspot/postprocess.hpp"
#include "kwspot/synthgen.hpp"
#include "kwspot/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace kwspot;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

void write_stamp(const std::string& out_dir, const std::string& command, uint64_t seed,
                 uint64_t config_hash) {
  json j;
  j["artifact_version"] = kArtifactVersion;
  j["command"] = command;
  j["seed"] = seed;
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)config_hash);
  j["config_hash"] = hex;
  write_file_atomic((fs::path(out_dir) / "stamp.json").string(), j.dump(2) + "\n");
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string config, vocab, out;
  int count = 0;
  int make_vocab = 0;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg = load_synth_config(a.config);
  if (a.seed_set) cfg.seed = a.seed;

  KeywordVocab vocab;
  if (a.make_vocab > 0) {
    vocab = make_random_vocab(a.make_vocab, cfg.seed);
    save_vocab(vocab, a.vocab);
  } else {
    vocab = load_vocab(a.vocab);
  }

  fs::create_directories(a.out);
  std::vector<ImageSample> samples = synthesize(cfg, vocab, a.count, &std::cerr);
  save_dataset(samples, (fs::path(a.out) / "manifest.jsonl").string());
  write_stamp(a.out, "synth", cfg.seed, file_hash(a.config));
  std::cout << "synth: wrote " << samples.size() << " samples to " << a.out << "\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, vocab, out, resume, synth_manifest, real_manifest;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.seed_set) cfg.seed = a.seed;

  KeywordVocab vocab = load_vocab(a.vocab);
  if (cfg.phase == TrainPhase::finetune && a.resume.empty())
    throw ConfigError("finetune requires --resume <checkpoint>");

  NetworkConfig net;
  if (!a.resume.empty()) {
    net = load_checkpoint(a.resume).config;
    if (net.num_keywords != vocab.size())
      throw ConfigError("checkpoint K=" + std::to_string(net.num_keywords) +
                        " does not match vocabulary K=" + std::to_string(vocab.size()));
  } else {
    net.num_keywords = vocab.size();
  }

  std::vector<ImageSample> synth = load_dataset(a.synth_manifest);
  std::vector<ImageSample> real;
  if (!a.real_manifest.empty()) real = load_dataset(a.real_manifest);

  Detector<float> model(net);
  Trainer trainer(model, cfg);
  if (!a.resume.empty())
    trainer.load_checkpoint_file(a.resume);
  else
    model.initialize(cfg.seed);

  fs::create_directories(a.out);
  trainer.run_phase(synth, real.empty() ? nullptr : &real,
                    (fs::path(a.out) / "checkpoint.ckpt").string(),
                    (fs::path(a.out) / "metrics.csv").string());
  write_stamp(a.out, "train", cfg.seed, file_hash(a.config));
  std::cout << "train: finished at step " << trainer.step() << ", checkpoint in " << a.out
            << "\n";
  return kExitOk;
}

// ---- spot -------------------------------------------------------------------

struct SpotArgs {
  std::string checkpoint, vocab, out;
  std::vector<std::string> images;
  double score_thresh = 0.35;
  uint64_t seed = 0;
};

int run_spot(const SpotArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  KeywordVocab vocab = load_vocab(a.vocab);
  if (ck.config.num_keywords != vocab.size())
    throw ConfigError("checkpoint K=" + std::to_string(ck.config.num_keywords) +
                      " does not match vocabulary K=" + std::to_string(vocab.size()));
  Detector<float> model(ck.config);
  model.load_params(ck.tensors);

  SpotOptions opt;
  opt.score_thresh = a.score_thresh;

  fs::create_directories(fs::path(a.out) / "overlays");
  std::vector<KeywordDetection> all;
  int failures = 0;
  for (const std::string& path : a.images) {
    ImageRGB img;
    try {
      img = read_png(path);
    } catch (const Error& e) {
      std::cerr << "spot: skipping " << path << ": " << e.what() << "\n";
      ++failures;
      continue;
    }
    const std::string id = fs::path(path).filename().string();
    SpotResult result = spot_image(model, img, id, opt);
    all.insert(all.end(), result.keywords.begin(), result.keywords.end());

    ImageRGB overlay = img;
    for (const LineDetection& line : result.lines)
      draw::quad_outline(overlay, line.rect.to_quad(), draw::kRed);
    for (const KeywordDetection& kw : result.keywords) {
      draw::quad_outline(overlay, kw.rect.to_quad(), draw::kGreen);
      char label[48];
      std::snprintf(label, sizeof(label), "k%d %.2f", kw.class_id, kw.confidence);
      Vec2 lo, hi;
      kw.rect.to_quad().aabb(lo, hi);
      draw::text(overlay, int(lo.x), std::max(0, int(lo.y) - 9), label, draw::kGreen);
    }
    write_png(overlay, (fs::path(a.out) / "overlays" / id).string());
  }
  if (!a.images.empty() && failures == int(a.images.size()))
    throw IoError("no input image could be read");

  save_detections(all, (fs::path(a.out) / "detections.jsonl").string());
  write_stamp(a.out, "spot", a.seed, file_hash(a.checkpoint));
  std::cout << "spot: " << all.size() << " keyword detections over "
            << (a.images.size() - size_t(failures)) << " images\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string detections, manifest, vocab, out;
  bool plot = false;
  uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  std::vector<KeywordDetection> dets = load_detections(a.detections);
  std::vector<ImageSample> gt = load_dataset(a.manifest);
  KeywordVocab vocab = load_vocab(a.vocab);
  for (const KeywordDetection& d : dets)
    if (d.class_id < 1 || d.class_id > vocab.size())
      throw VocabError("detection class id " + std::to_string(d.class_id) +
                       " outside vocabulary");

  EvalReport report = evaluate(dets, gt, vocab);
  fs::create_directories(a.out);
  write_file_atomic((fs::path(a.out) / "report.json").string(),
                    eval_report_to_json(report, vocab) + "\n");

  std::ostringstream txt;
  txt << "class  |r|    AP\n";
  for (const ClassAP& c : report.per_class) {
    char row[64];
    std::snprintf(row, sizeof(row), "k%-5d %-6d %.4f\n", c.class_id, c.total_relevant, c.ap);
    txt << row;
  }
  char map_row[48];
  std::snprintf(map_row, sizeof(map_row), "mAP    (%zu cls) %.4f\n", report.per_class.size(),
                report.map);
  txt << map_row;
  write_file_atomic((fs::path(a.out) / "report.txt").string(), txt.str());
  std::cout << txt.str();

  if (a.plot) {
    for (const ClassAP& c : report.per_class) {
      RankedRetrieval rr = build_retrieval(dets, gt, vocab, c.class_id);
      auto points = pr_curve(rr);
      std::ostringstream csv;
      csv << "recall,precision\n";
      for (const auto& [rec, prec] : points) csv << rec << ',' << prec << "\n";
      const std::string base = "pr_class_" + std::to_string(c.class_id);
      write_file_atomic((fs::path(a.out) / (base + ".csv")).string(), csv.str());
      write_png(draw::render_xy(points, "k" + std::to_string(c.class_id)),
                (fs::path(a.out) / (base + ".png")).string());
    }
  }
  write_stamp(a.out, "eval", a.seed, file_hash(a.detections));
  return kExitOk;
}

// ---- plot -------------------------------------------------------------------

struct PlotArgs {
  std::string metrics, out;
  uint64_t seed = 0;
};

int run_plot(const PlotArgs& a) {
  std::ifstream in(a.metrics);
  if (!in) throw IoError("cannot open metrics log " + a.metrics);
  std::string header;
  if (!std::getline(in, header)) throw SchemaError("metrics log is empty");

  std::vector<std::string> columns;
  {
    std::istringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ',')) columns.push_back(col);
  }
  const std::vector<std::string> wanted{"rpn_obj",   "rpn_box",      "box_cls", "box_reg",
                                        "line_mask", "keyword_mask", "total"};
  std::map<std::string, size_t> col_of;
  for (size_t i = 0; i < columns.size(); ++i) col_of[columns[i]] = i;
  for (const std::string& wcol : wanted)
    if (!col_of.count(wcol)) throw SchemaError("metrics log misses column " + wcol);

  std::map<std::string, std::vector<double>> series;
  std::string row;
  int rowno = 0;
  while (std::getline(in, row)) {
    if (row.empty()) continue;
    ++rowno;
    std::vector<std::string> cells;
    std::istringstream rs(row);
    std::string cell;
    while (std::getline(rs, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns.size())
      throw SchemaError("metrics row " + std::to_string(rowno) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(columns.size()));
    for (const std::string& wcol : wanted) {
      try {
        series[wcol].push_back(std::stod(cells[col_of[wcol]]));
      } catch (const std::exception&) {
        throw SchemaError("metrics row " + std::to_string(rowno) + ": bad value in " + wcol);
      }
    }
  }
  if (rowno == 0) throw SchemaError("metrics log has no data rows");

  fs::create_directories(a.out);
  for (const std::string& wcol : wanted)
    write_png(draw::render_series(series[wcol], wcol),
              (fs::path(a.out) / ("loss_" + wcol + ".png")).string());
  write_stamp(a.out, "plot", a.seed, file_hash(a.metrics));
  std::cout << "plot: wrote " << wanted.size() << " charts to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kwspot: text-line-guided keyword spotting"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth", "Render an annotated synthetic dataset");
  synth->add_option("--config", sa.config, "Synthesis config (JSON)")->required();
  synth->add_option("--vocab", sa.vocab, "Keyword vocabulary (JSON)")->required();
  synth->add_option("--count", sa.count, "Number of samples to render")->required();
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--make-vocab", sa.make_vocab,
                    "Generate a K-keyword vocabulary at --vocab first");
  auto* synth_seed = synth->add_option("--seed", sa.seed, "Override the config rng seed");

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Pretrain or finetune the detector");
  train->add_option("--config", ta.config, "Training config (JSON)")->required();
  train->add_option("--vocab", ta.vocab, "Keyword vocabulary (JSON)")->required();
  train->add_option("--synth", ta.synth_manifest, "Synthetic dataset manifest")->required();
  train->add_option("--real", ta.real_manifest, "Real (line-only) dataset manifest");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  auto* train_seed = train->add_option("--seed", ta.seed, "Override the config rng seed");

  SpotArgs pa;
  CLI::App* spot = app.add_subcommand("spot", "Detect lines and spot keywords on images");
  spot->add_option("--checkpoint", pa.checkpoint, "Model checkpoint")->required();
  spot->add_option("--vocab", pa.vocab, "Keyword vocabulary (JSON)")->required();
  spot->add_option("--out", pa.out, "Output directory")->required();
  spot->add_option("--score-thresh", pa.score_thresh, "Box-head text score gate");
  spot->add_option("--seed", pa.seed, "Stamp seed (inference is deterministic)");
  spot->add_option("images", pa.images, "Input PNG images")->required();

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Retrieval mAP over a detection dump");
  eval->add_option("--detections", ea.detections, "Detections JSON-lines")->required();
  eval->add_option("--manifest", ea.manifest, "Ground-truth dataset manifest")->required();
  eval->add_option("--vocab", ea.vocab, "Keyword vocabulary (JSON)")->required();
  eval->add_option("--out", ea.out, "Output directory")->required();
  eval->add_flag("--plot", ea.plot, "Also write PR-curve CSVs and images");
  eval->add_option("--seed", ea.seed, "Stamp seed");

  PlotArgs la;
  CLI::App* plot = app.add_subcommand("plot", "Render loss curves from a metrics log");
  plot->add_option("--metrics", la.metrics, "Training metrics CSV")->required();
  plot->add_option("--out", la.out, "Output directory")->required();
  plot->add_option("--seed", la.seed, "Stamp seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  sa.seed_set = synth_seed->count() > 0;
  ta.seed_set = train_seed->count() > 0;

  try {
    if (synth->parsed()) return run_synth(sa);
    if (train->parsed()) return run_train(ta);
    if (spot->parsed()) return run_spot(pa);
    if (eval->parsed()) return run_eval(ea);
    if (plot->parsed()) return run_plot(la);
    return kExitUsage;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
