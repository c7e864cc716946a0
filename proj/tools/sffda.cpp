// SPDX-License-Identifier: Apache-2.0
// sffda: synthesize, extract, train, evaluate and screen.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sffda/sffda.hpp"

namespace fs = std::filesystem;
using namespace sffda;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The invoked subcommand's options, including defaults, as a config file
/// that `--config` reads back.
std::string resolved_config(const CLI::App& cmd) {
  return "[" + cmd.get_name() + "]\n" + cmd.config_to_str(true, false);
}

/// key=value lines.
std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line.front() == '#' || eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::vector<int> labels_of(const Manifest& m) {
  std::vector<int> y;
  for (const auto& s : m.samples) y.push_back(s.y());
  return y;
}

struct NetOptions {
  std::string streams = "location,eyes,mouth,ippg";
  std::size_t frames = kDefaultFrames;
  std::string widths = "8,16,32,32,64";
  std::size_t attention_channels = 4;
  std::size_t hidden = 64;
  std::size_t fusion_hidden = 64;

  void add_to(CLI::App* app) {
    app->add_option("--streams", streams, "Comma-separated streams: location,eyes,mouth,ippg")
        ->capture_default_str();
    app->add_option("--frames", frames, "Standardized clip length T")->capture_default_str();
    app->add_option("--widths", widths, "Five 3D-CNN layer widths")->capture_default_str();
    app->add_option("--attention-channels", attention_channels, "Temporal attention conv width")
        ->capture_default_str();
    app->add_option("--hidden", hidden, "LSTM hidden size")->capture_default_str();
    app->add_option("--fusion-hidden", fusion_hidden, "Fusion layer width")->capture_default_str();
  }

  NetworkConfig resolve() const {
    NetworkConfig c;
    apply_setting(c, "streams", streams);
    c.frames = frames;
    apply_setting(c, "widths", widths);
    c.attention_channels = attention_channels;
    c.hidden = hidden;
    c.fusion_hidden = fusion_hidden;
    c.validate();
    return c;
  }
};

struct RunFiles {
  fs::path dir;
  fs::path network() const { return dir / "network.cfg"; }
  fs::path checkpoint() const { return dir / "checkpoint.sffw"; }
  fs::path state() const { return dir / "train_state.sffw"; }
  fs::path history() const { return dir / "history.tsv"; }
  fs::path manifest() const { return dir / "manifest.txt"; }
  fs::path screening() const { return dir / "screening.txt"; }
};

struct LoadedRun {
  NetworkConfig cfg;
  Network net;
  Manifest manifest;
  double thr;
  std::vector<std::string> refs;
};

LoadedRun load_run(const fs::path& dir) {
  RunFiles f{dir};
  std::istringstream cfg_text(read_text(f.network()));
  NetworkConfig cfg = parse_network_config(cfg_text);
  Network net(cfg);
  net.load(f.checkpoint());
  auto kv = read_kv(f.screening());
  if (!kv.count("thr") || !kv.count("refs")) throw FormatError(f.screening().string() + ": missing thr or refs");
  double thr = 0.0;
  if (!sffda::detail::parse_double(kv["thr"], thr)) throw FormatError("bad thr in " + f.screening().string());
  std::vector<std::string> refs;
  std::stringstream ss(kv["refs"]);
  std::string id;
  while (std::getline(ss, id, ',')) refs.push_back(id);
  return {cfg, std::move(net), load_manifest(f.manifest()), thr, refs};
}

// ---------------------------------------------------------------------------

struct SynthCmd {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t n = 4;
  std::optional<std::size_t> n_anxiety;
  double duration = 20.0;
  double fps = 25.0;
  std::size_t size = 32;
  double noise = 0.01;
  std::string signal_streams = "location,eyes,mouth,ippg";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "Generate a synthetic labelled dataset");
    c->add_option("--out", out, "Existing output directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    c->add_option("--n", n, "Samples per class")->capture_default_str();
    c->add_option("--n-anxiety", n_anxiety, "Anxiety samples (defaults to --n)");
    c->add_option("--duration", duration, "Clip length in seconds")->capture_default_str();
    c->add_option("--fps", fps, "Frame rate")->capture_default_str();
    c->add_option("--size", size, "Frame width and height in pixels")->capture_default_str();
    c->add_option("--noise", noise, "Per-pixel Gaussian noise sigma")->capture_default_str();
    c->add_option("--signal-streams", signal_streams, "Streams that differ between classes")
        ->capture_default_str();
    c->callback([this, c] { run(*c); });
  }

  void run(const CLI::App& cmd) const {
    synth::SynthSpec spec;
    spec.seed = seed;
    spec.n_free = n;
    spec.n_anxiety = n_anxiety.value_or(n);
    spec.duration = duration;
    spec.fps = fps;
    spec.width = spec.height = size;
    spec.noise = noise;
    spec.signal_streams = parse_streams(signal_streams);
    spec.validate();
    const auto m = synth::gen_classification_set(spec, out);
    write_text(fs::path(out) / "synth_config.txt", resolved_config(cmd));
    std::cout << "wrote " << m.size() << " samples to " << (fs::path(out) / "manifest.txt").string() << '\n';
  }
};

struct ExtractCmd {
  std::string manifest;
  std::string out;
  NetOptions net;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("extract", "Compute per-stream feature caches");
    c->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Feature directory (created)")->required();
    c->add_option("--streams", net.streams, "Streams to extract")->capture_default_str();
    c->add_option("--frames", net.frames, "Standardized clip length T")->capture_default_str();
    c->callback([this, c] { run(*c); });
  }

  void run(const CLI::App& cmd) const {
    const auto streams = parse_streams(net.streams);
    const auto m = load_manifest(manifest);
    fs::create_directories(out);
    const auto feats = extract_all(m, streams, net.frames, thread_budget());
    for (std::size_t i = 0; i < m.size(); ++i) save_features(out, m.samples[i].id, feats[i]);
    write_text(fs::path(out) / "extract_config.txt", resolved_config(cmd));
    std::cout << "extracted " << m.size() << " samples into " << out << '\n';
  }
};

struct TrainCmd {
  std::string manifest;
  std::string out;
  NetOptions net;
  std::size_t epochs = 50;
  double lr = 1e-4;
  double alpha = 0.5;
  double beta = 0.5;
  std::size_t refs = kDefaultReferences;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  bool no_balance = false;
  bool resume = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "Balance, split and train the Siamese model");
    c->add_option("--manifest", manifest, "Dataset manifest")->check(CLI::ExistingFile);
    c->add_option("--out", out, "Run directory (created)")->required();
    net.add_to(c);
    c->add_option("--epochs", epochs, "Total epochs")->capture_default_str();
    c->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    c->add_option("--alpha", alpha, "Weight of the similarity loss")->capture_default_str();
    c->add_option("--beta", beta, "Weight of the prediction loss")->capture_default_str();
    c->add_option("--refs", refs, "Reference set size")->capture_default_str();
    c->add_option("--seed", seed, "Random seed")->capture_default_str();
    c->add_option("--ratio", ratio, "Training fraction per class")->capture_default_str();
    c->add_flag("--no-balance", no_balance, "Keep the class imbalance");
    c->add_flag("--resume", resume, "Continue the run in --out");
    c->callback([this, c] { run(*c); });
  }

  void run(const CLI::App& cmd) const {
    RunFiles f{out};
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0) throw ConfigError("alpha and beta must lie in [0,1]");
    if (refs == 0) throw ConfigError("--refs must be positive");
    NetworkConfig cfg;
    Manifest data;
    if (resume) {
      std::istringstream cfg_text(read_text(f.network()));
      cfg = parse_network_config(cfg_text);
      data = load_manifest(f.manifest());
    } else {
      if (manifest.empty()) throw ConfigError("--manifest is required unless --resume is given");
      cfg = net.resolve();
      auto m = load_manifest(manifest);
      if (m.size() == 0) throw DataError("empty manifest");
      // The iPPG feature width depends on the frame rate.
      const double fps = m.samples.front().fps;
      for (const auto& s : m.samples) {
        if (s.fps != fps) throw DataError("samples differ in fps (" + s.id + ")");
      }
      cfg.ippg_dim = ippg::feature_width(fps);
      if (!no_balance) m = balance_classes(m, seed);
      data = split(m, ratio, seed);
      fs::create_directories(out);
      save_manifest(f.manifest(), data);
      write_text(f.network(), to_text(cfg));
      write_text(f.history(), "epoch\tloss\tloss1\tloss2\n");
    }
    const Manifest train_set = data.subset(Split::kTrain);
    const auto labels = labels_of(train_set);
    const auto feats = extract_all(train_set, cfg.streams, cfg.frames, thread_budget());

    Network model(cfg, seed);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.lr = lr;
    tc.weights = {alpha, beta};
    tc.seed = seed;
    Trainer trainer(model, feats, labels, tc);
    if (resume) {
      model.load(f.checkpoint());
      trainer.restore(io::load_weights(f.state()));
    }
    std::ofstream history(f.history(), std::ios::app | std::ios::binary);
    trainer.train([&](const EpochStats& s) {
      std::cout << "epoch " << s.epoch << " Loss=" << format_number(s.loss) << " Loss1=" << format_number(s.loss1)
                << " Loss2=" << format_number(s.loss2) << std::endl;
      history << s.epoch << '\t' << format_number(s.loss) << '\t' << format_number(s.loss1) << '\t'
              << format_number(s.loss2) << '\n';
      history.flush();
      model.save(f.checkpoint());
      io::save_weights(f.state(), trainer.state());
      return true;
    });
    model.save(f.checkpoint());
    io::save_weights(f.state(), trainer.state());

    const auto probs = predict(model, feats);
    const double thr = auto_threshold(train_set.count(Label::kAnxietyFree), train_set.count(Label::kAnxiety));
    std::string ref_ids;
    for (std::size_t i : select_references(probs, labels, refs)) {
      ref_ids += (ref_ids.empty() ? "" : ",") + train_set.samples[i].id;
    }
    write_text(f.screening(), "thr=" + format_number(thr) + "\nrefs=" + ref_ids + "\n");
    write_text(fs::path(out) / "run_config.txt", resolved_config(cmd));
    std::cout << "train accuracy " << format_number(accuracy(probs, labels, thr)) << " at thr "
              << format_number(thr) << '\n';
  }
};

struct EvalCmd {
  std::string run_dir;
  std::optional<double> thr;
  std::uint64_t seed = 0;
  std::size_t repeats = 10;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "Score the held-out split of a run");
    c->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--thr", thr, "Decision threshold (defaults to the run's)");
    c->add_option("--seed", seed, "Permutation seed")->capture_default_str();
    c->add_option("--repeats", repeats, "Permutations per stream")->capture_default_str();
    c->callback([this, c] { run(*c); });
  }

  void run(const CLI::App& cmd) const {
    auto r = load_run(run_dir);
    const Manifest test = r.manifest.subset(Split::kTest);
    if (test.size() == 0) throw DataError("run has no test samples");
    const auto labels = labels_of(test);
    const auto feats = extract_all(test, r.cfg.streams, r.cfg.frames, thread_budget());
    const auto probs = predict(r.net, feats);
    Report rep;
    rep.thr = thr.value_or(r.thr);
    rep.counts = confusion(labels, probs, rep.thr);
    rep.metrics = metrics(rep.counts);
    for (const auto& w : rep.metrics.warnings) std::cerr << "warning: " << w << '\n';
    Roc roc;
    try {
      roc = roc_auc(labels, probs);
      rep.auc = roc.auc;
    } catch (const DataError& e) {
      std::cerr << "warning: " << e.what() << "; AUC reported as 0\n";
      rep.metrics.warnings.push_back(std::string("AUC undefined: ") + e.what());
    }
    for (const auto& [s, v] : permutation_importance(r.net, feats, labels, rep.thr, seed, repeats)) {
      rep.importance[stream_name(s)] = v;
    }
    std::ostringstream report, roc_text;
    write_report(report, rep);
    write_roc(roc_text, roc);
    write_text(fs::path(run_dir) / "report.txt", report.str());
    write_text(fs::path(run_dir) / "roc.tsv", roc_text.str());
    write_text(fs::path(run_dir) / "eval_config.txt", resolved_config(cmd));
    std::cout << report.str();
  }
};

struct ScreenCmd {
  std::string run_dir;
  std::string id;
  std::optional<double> thr;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("screen", "Screen one sample of a run's manifest");
    c->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--id", id, "Sample id")->required();
    c->add_option("--thr", thr, "Decision threshold (defaults to the run's)");
    c->callback([this] { run(); });
  }

  void run() const {
    auto r = load_run(run_dir);
    const Sample& s = r.manifest.find(id);
    const auto f = extract_sample(s, r.cfg.streams, r.cfg.frames);
    std::vector<Features> refs;
    for (const auto& rid : r.refs) refs.push_back(extract_sample(r.manifest.find(rid), r.cfg.streams, r.cfg.frames));
    const auto v = screen(r.net, f, refs, thr.value_or(r.thr));
    std::cout << "id=" << id << " prob=" << format_number(v.prob) << " dissimilarity=" << format_number(v.dissimilarity)
              << " label=" << (v.anxiety ? "anxiety" : "anxiety-free") << " thr=" << format_number(v.thr) << '\n';
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anxiety screening from facial behavior and iPPG features"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from a resolved-config file");
  SynthCmd synth_cmd;
  ExtractCmd extract_cmd;
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  ScreenCmd screen_cmd;
  synth_cmd.add(app);
  extract_cmd.add(app);
  train_cmd.add(app);
  eval_cmd.add(app);
  screen_cmd.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
