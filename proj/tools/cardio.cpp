// Command-line entry point: service, evaluation and the batch utilities.

#include <csignal>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cardio/benchgen.hpp"
#include "cardio/eval.hpp"
#include "cardio/grpo.hpp"
#include "cardio/media.hpp"
#include "cardio/mirage.hpp"
#include "cardio/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cardio;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFault = 1;
constexpr int kExitInvalid = 2;

service::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) std::thread([] { g_service->stop(); }).detach();
}

std::string default_data(const std::string& name) { return (fs::path(CARDIO_DATA_DIR) / name).string(); }

service::ServiceConfig config_or_default(const std::string& path) {
  if (!path.empty()) return service::load_config(path);
  service::ServiceConfig cfg;
  cfg.routing_table = default_data("routing_table.json");
  cfg.polarity_lexicon = default_data("polarity_lexicon.json");
  cfg.failure_keywords = default_data("failure_keywords.json");
  cfg.templates = default_data("templates.json");
  cfg.records = default_data("records.json");
  for (auto m : kAllModalities) {
    gateway::BackendSpec spec;
    spec.id = fmt::format("{}-grounded", to_string(m));
    spec.kind = gateway::BackendKind::MockGrounded;
    spec.modality = m;
    spec.table_path = default_data(fmt::format("mocks/{}_grounded.json", to_string(m)));
    cfg.backends[m] = spec;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac multimodal expert orchestration, evaluation and training utilities"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::string log_level = "info";
  app.add_option("--config", config_path, "YAML configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random stream");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string host;
  int port = -1;
  serve->add_option("--host", host, "Listen address (overrides config)");
  serve->add_option("--port", port, "Listen port (overrides config)");

  // eval
  auto* ev = app.add_subcommand("eval", "Score model runs against a benchmark");
  std::string bench_path;
  std::vector<std::string> run_paths;
  std::vector<std::string> absent_paths;
  std::string likert_path;
  std::string out_dir = "report";
  std::string keywords_path;
  bool bclean = false;
  ev->add_option("--bench", bench_path, "Benchmark JSON-Lines")->required();
  ev->add_option("--runs", run_paths, "Image-present run files")->required();
  ev->add_option("--absent-runs", absent_paths, "Image-absent run files (B-Clean)");
  ev->add_option("--likert", likert_path, "Likert scores JSON {model: {item_id: {value, explanation}}}");
  ev->add_option("--out", out_dir, "Report directory");
  ev->add_option("--keywords", keywords_path, "Failure keyword JSON");
  ev->add_flag("--bclean", bclean, "Drop items any image-absent run answered correctly");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a benchmark from templates and report records");
  std::string templates_path;
  std::string records_path;
  std::string gen_out = "benchmark.jsonl";
  std::string stats_out;
  double none_fraction = 0.2;
  gen->add_option("--templates", templates_path, "Template JSON");
  gen->add_option("--records", records_path, "Report record JSON");
  gen->add_option("--out", gen_out, "Output JSON-Lines");
  gen->add_option("--stats", stats_out, "Write generation stats JSON here");
  gen->add_option("--none-fraction", none_fraction, "Share of MCQs given the none-option")->check(CLI::Range(0.0, 1.0));

  // render
  auto* render = app.add_subcommand("render", "Render an ECG XML file as a 4x3 grid (P6)");
  std::string ecg_in;
  std::string ppm_out = "grid.ppm";
  int width = 1200;
  int height = 900;
  render->add_option("--in", ecg_in, "ECG XML")->required();
  render->add_option("--out", ppm_out, "Output P6 pixmap");
  render->add_option("--width", width, "Width in pixels")->check(CLI::Range(96, 20000));
  render->add_option("--height", height, "Height in pixels")->check(CLI::Range(96, 20000));

  // grpo-demo
  auto* demo = app.add_subcommand("grpo-demo", "Train a tabular policy on a seeded bandit");
  std::size_t steps = 200;
  std::string truth = "B";
  std::string metrics_out;
  std::optional<double> lr;
  std::optional<double> kl;
  demo->add_option("--steps", steps, "Training steps");
  demo->add_option("--truth", truth, "Correct letter")->check(CLI::IsMember({"A", "B", "C", "D", "E"}));
  demo->add_option("--out", metrics_out, "Metrics CSV (stdout when omitted)");
  demo->add_option("--lr", lr, "Learning rate");
  demo->add_option("--kl", kl, "KL coefficient");

  // probe
  auto* probe = app.add_subcommand("probe", "Verify one question against one modality expert");
  std::string question;
  std::string subject;
  std::string modality_name;
  std::vector<std::string> media_paths;
  std::string table_path;
  probe->add_option("--question", question, "Question text")->required();
  probe->add_option("--subject", subject, "Subject phrase for the descriptive rephrasing");
  probe->add_option("--modality", modality_name, "ecg, echo or cmr")->required()->check(CLI::IsMember({"ecg", "echo", "cmr"}));
  probe->add_option("--media", media_paths, "Media files")->required();
  probe->add_option("--table", table_path, "Mock behavior table (instead of the configured backend)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version come through here with a zero code
    return app.exit(e) == 0 ? kExitOk : kExitInvalid;
  }
  seed_given = seed_opt->count() > 0;
  spdlog::set_default_logger(spdlog::stderr_color_mt("cardio"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*serve) {
      auto cfg = config_or_default(config_path);
      if (seed_given) cfg.seed = seed;
      if (!host.empty()) cfg.host = host;
      if (port >= 0) cfg.port = port;
      service::Service svc(cfg);
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      if (!svc.listen()) {
        spdlog::error("cannot listen on {}:{}", cfg.host, cfg.port);
        return kExitFault;
      }
      g_service = nullptr;
      return kExitOk;
    }

    if (*ev) {
      try {
        service::EvalRequest req;
        req.bench = bench_path;
        req.runs = run_paths;
        req.absent_runs = absent_paths;
        if (!likert_path.empty()) req.likert = likert_path;
        req.bclean = bclean;
        if (bclean && absent_paths.empty()) throw std::invalid_argument("--bclean needs --absent-runs");
        std::vector<std::string> inputs{bench_path};
        inputs.insert(inputs.end(), run_paths.begin(), run_paths.end());
        inputs.insert(inputs.end(), absent_paths.begin(), absent_paths.end());
        if (!likert_path.empty()) inputs.push_back(likert_path);
        for (const auto& p : inputs) {
          if (!fs::is_regular_file(p)) throw std::invalid_argument(fmt::format("no such file: {}", p));
        }
        std::string keywords = keywords_path;
        if (keywords.empty()) {
          keywords = config_path.empty() ? default_data("failure_keywords.json")
                                         : service::load_config(config_path).failure_keywords;
        }
        const std::uint64_t s = seed_given ? seed : (config_path.empty() ? 42 : service::load_config(config_path).seed);
        service::run_eval(req, out_dir, keywords, s);
        std::cout << fmt::format("report written to {}\n", (fs::path(out_dir) / "report.json").string());
        return kExitOk;
      } catch (const JsonLinesError& e) {
        std::cerr << fmt::format("invalid input: {} (line {})\n", e.what(), e.line());
        return kExitInvalid;
      } catch (const json::exception& e) {
        std::cerr << fmt::format("invalid input: {}\n", e.what());
        return kExitInvalid;
      } catch (const std::invalid_argument& e) {
        std::cerr << fmt::format("invalid input: {}\n", e.what());
        return kExitInvalid;
      } catch (const eval::EvalError& e) {
        std::cerr << fmt::format("invalid input: {}\n", e.what());
        return kExitInvalid;
      }
    }

    if (*gen) {
      auto cfg = config_or_default(config_path);
      const auto tpl = templates_path.empty() ? cfg.templates : templates_path;
      const auto rec = records_path.empty() ? cfg.records : records_path;
      benchgen::GenerationConfig gc{seed_given ? seed : cfg.seed, none_fraction};
      const auto ds = benchgen::generate_dataset(benchgen::load_templates(tpl), benchgen::load_records(rec), gc);
      write_benchmark(gen_out, ds.items);
      const auto stats = benchgen::to_json(ds.stats).dump(2);
      if (!stats_out.empty()) write_file_atomic(stats_out, stats + "\n");
      std::cout << stats << "\n";
      return kExitOk;
    }

    if (*render) {
      const auto rec = media::read_ecg_xml(ecg_in);
      const auto grid = media::render_ecg_grid(rec, width, height);
      media::write_ppm(ppm_out, grid.image);
      const auto& c = grid.calibration;
      std::cout << json{{"out", ppm_out},
                        {"width", width},
                        {"height", height},
                        {"cell", {c.cell_width, c.cell_height}},
                        {"px_per_mm", {c.px_per_mm_x, c.px_per_mm_y}},
                        {"major_grid_px", {c.major_x, c.major_y}}}
                       .dump()
                << "\n";
      return kExitOk;
    }

    if (*demo) {
      auto cfg = config_or_default(config_path);
      auto g = cfg.grpo;
      g.seed = seed_given ? seed : g.seed;
      if (lr) g.learning_rate = *lr;
      if (kl) g.kl_coeff = *kl;
      const auto reference = grpo::TabularPolicy::uniform({"bandit"});
      const auto run = grpo::train(reference, {{"bandit", truth[0]}}, g, steps);
      const auto csv = grpo::metrics_csv(run.metrics);
      if (metrics_out.empty()) {
        std::cout << csv;
      } else {
        write_file_atomic(metrics_out, csv);
      }
      const std::size_t tail = std::min<std::size_t>(50, run.metrics.size());
      double trailing = 0.0;
      for (std::size_t i = run.metrics.size() - tail; i < run.metrics.size(); ++i) trailing += run.metrics[i].mean_reward;
      spdlog::info("final expected reward {:.4f}, trailing {}-step sampled reward {:.4f}",
                   run.metrics.back().expected_reward, tail, trailing / static_cast<double>(tail));
      return kExitOk;
    }

    if (*probe) {
      const auto m = modality_from_string(modality_name);
      gateway::BackendPtr backend;
      double threshold = 0.85;
      if (!table_path.empty()) {
        backend = std::make_shared<gateway::MockBackend>(gateway::MockTable::load(table_path));
      } else {
        auto cfg = config_or_default(config_path);
        threshold = cfg.mirage_threshold;
        if (!cfg.backends.count(m)) throw std::invalid_argument(fmt::format("no backend configured for {}", modality_name));
        backend = gateway::make_backend(cfg.backends.at(m));
      }
      std::vector<MediaRef> media;
      for (const auto& p : media_paths) {
        const auto ext = fs::path(p).extension().string();
        const auto kind = ext == ".xml" ? MediaKind::SignalXml
                          : ext == ".json" ? MediaKind::StudyManifest
                          : (ext == ".mp4" || ext == ".avi") ? MediaKind::Video
                                                               : MediaKind::Image;
        media.push_back({m, p, kind});
      }
      auto set = mirage::make_probe_set(question, subject, m, media);
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& q = i < 3 ? set.rephrasings[i] : set.counterfactual;
        set.responses[q.probe_role] = gateway::query(*backend, q);
      }
      mirage::MirageConfig mc;
      mc.threshold = threshold;
      std::cout << json(mirage::verify(set, mc)).dump(2) << "\n";
      return kExitOk;
    }
  } catch (const service::ConfigError& e) {
    std::cerr << fmt::format("configuration error: {}\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << fmt::format("error: {}\n", e.what());
    return kExitFault;
  }
  return kExitOk;
}
