// casectl: serve the interview API and run the offline batch jobs.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "casekit/api.hpp"
#include "casekit/config.hpp"
#include "casekit/evalkit.hpp"
#include "casekit/extractor.hpp"
#include "casekit/orchestrator.hpp"
#include "casekit/store.hpp"

namespace {

using namespace casekit;

struct Globals {
  std::string config_path;
  std::string db_path;
  std::string log_level = "info";
  bool table = false;
};

AppConfig load_config(const Globals& g) {
  AppConfig config;
  if (!g.config_path.empty()) config = load_app_config(g.config_path);
  apply_environment(config);
  if (!g.db_path.empty()) config.db_path = g.db_path;
  return config;
}

TimePoint parse_ts(const std::string& text, const char* flag) {
  const auto t = parse_timestamp(text);
  if (!t) throw Error(ErrorCode::invalid_argument, std::string(flag) + ": cannot parse timestamp '" + text + "'");
  return *t;
}

void print(const OrderedJson& doc) { std::cout << doc.dump(2) << "\n"; }

std::vector<std::string> load_script(const std::string& path) {
  const Json doc = load_document(path);
  const Json& lines = doc.is_object() ? doc.value("inputs", Json()) : doc;
  if (!lines.is_array()) {
    throw Error(ErrorCode::invalid_config, path + ": expected a list of inputs or {\"inputs\": [...]}");
  }
  return lines.get<std::vector<std::string>>();
}

// The server loop only needs a way out on SIGINT/SIGTERM.
ApiServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const Globals& g, const std::string& addr_override) {
  AppConfig config = load_config(g);
  if (!addr_override.empty()) config.server.addr = addr_override;
  auto store = open_sqlite_store(config.db_path, config.store_options());
  Gateway gateway;
  register_backends(gateway, config);
  Orchestrator orchestrator(config.orchestrator, config.policies, *store, gateway);
  const char* token = std::getenv(config.server.admin_token_env.c_str());
  if (!token || !*token) {
    spdlog::warn("{} is not set; admin endpoints will reject every request",
                 config.server.admin_token_env);
  }
  Api api(orchestrator, *store, gateway, token ? token : "");
  ApiServer server(api, config.server);
  const auto [host, port] = parse_listen_addr(config.server.addr);
  const int bound = server.bind(host, port);
  spdlog::info("listening on {}:{} (config {}, db {})", host, bound, config.config_version,
               config.db_path.string());
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

int cmd_extract(const Globals& g, std::size_t limit, std::size_t workers, bool requeue) {
  const AppConfig config = load_config(g);
  auto store = open_sqlite_store(config.db_path, config.store_options());
  if (requeue) spdlog::info("requeued {} failed session(s)", store->requeue_failed());
  Gateway gateway;
  register_backends(gateway, config);
  Extractor extractor(*store, gateway, config.schema, load_configured_shots(config), config.extractor);
  print(to_json(extractor.run_batch(limit, workers)));
  return 0;
}

int cmd_eval_extractor(const Globals& g, const std::string& golden_path) {
  const AppConfig config = load_config(g);
  const auto golden = load_golden(golden_path, config.schema);
  const auto pool = filter_split(golden, GoldenSplit::shots);
  std::vector<GoldenExample> shots;
  if (!pool.empty()) {
    const ShotSet picked = select_shots(pool, config.shots_k, config.shots_seed);
    for (const auto& id : picked.example_ids) {
      for (const auto& e : pool) {
        if (e.example_id == id) shots.push_back(e);
      }
    }
  }
  Gateway gateway;
  register_backends(gateway, config);
  auto scratch = make_memory_store();
  Extractor extractor(*scratch, gateway, config.schema, shots, config.extractor);
  PredictionMap predictions;
  for (const auto& e : golden) {
    if (e.split != GoldenSplit::holdout) continue;
    const ExtractionOutcome out = extractor.extract_transcript(e.transcript);
    if (out.ok()) {
      predictions[e.example_id] = std::get<ScamReport>(out.result);
    } else {
      spdlog::warn("{}: extraction failed: {}", e.example_id,
                   out.last_error.empty() ? std::get<ValidationFailure>(out.result).summary()
                                          : out.last_error);
      predictions[e.example_id] = std::nullopt;
    }
  }
  const EvalMetrics metrics = score_extractor(predictions, golden);
  if (g.table) {
    std::cout << render_table(metrics);
  } else {
    print(to_json(metrics));
  }
  return 0;
}

int cmd_eval_safety(const Globals& g, const std::vector<std::string>& suites) {
  const AppConfig config = load_config(g);
  Gateway gateway;
  register_backends(gateway, config);
  OrderedJson results = OrderedJson::array();
  for (const auto& path : suites) {
    const auto suite = AdversarialSuite::load(path);
    const auto result = run_structured_eval(suite, config.orchestrator, config.policies, gateway);
    if (g.table) {
      std::printf("%-24s %5zu/%-5zu %6.2f%%\n", result.suite_id.c_str(), result.passed,
                  result.cases, result.compliance_rate * 100.0);
    }
    results.push_back(to_json(result));
  }
  if (!g.table) print(results);
  return 0;
}

int cmd_eval_quality(const Globals& g, double rate, const std::string& salt,
                     const std::string& since, const std::string& human_path) {
  const AppConfig config = load_config(g);
  auto store = open_sqlite_store(config.db_path, config.store_options());
  Gateway gateway;
  register_backends(gateway, config);
  std::optional<TimePoint> start;
  if (!since.empty()) start = parse_ts(since, "--since");

  std::vector<std::string> concluded;
  std::vector<QualityScore> automatic;
  OrderedJson ratings = OrderedJson::array();
  for (const auto& s : store->list_sessions(start, std::nullopt)) {
    if (s.is_active()) continue;
    concluded.push_back(s.session_id);
    const AutoRating r = auto_rate(s, config.rubric, gateway, config.rater);
    if (r.score) automatic.push_back(*r.score);
    ratings.push_back(to_json(r));
  }
  OrderedJson out;
  out["rubric_version"] = config.rubric.version;
  out["ratings"] = std::move(ratings);
  out["human_sample"] = sample_for_human(concluded, rate, salt);
  if (!human_path.empty()) {
    const auto human = load_quality_scores(human_path);
    out["calibration"] = to_json(calibrate(automatic, human));
  }
  print(out);
  return 0;
}

int cmd_redteam(const Globals& g, const std::string& script_path) {
  const AppConfig config = load_config(g);
  Gateway gateway;
  register_backends(gateway, config);
  auto store = make_memory_store();
  Orchestrator orchestrator(config.orchestrator, config.policies, *store, gateway);
  print(to_json(red_team_session(orchestrator, load_script(script_path))));
  return 0;
}

int cmd_funnel(const Globals& g, const std::string& since, const std::string& until,
               bool exclude_opening) {
  const AppConfig config = load_config(g);
  auto store = open_sqlite_store(config.db_path, config.store_options());
  std::optional<TimePoint> end;
  if (!until.empty()) end = parse_ts(until, "--until");
  const auto sessions = store->list_sessions(parse_ts(since, "--since"), end);
  const FunnelStats stats = funnel(sessions, FunnelOptions{!exclude_opening});
  if (g.table) {
    std::cout << render_table(stats);
  } else {
    print(to_json(stats));
  }
  return 0;
}

int cmd_export(const Globals& g, const std::string& since, const std::string& until,
               const std::string& mo, const std::string& out_path) {
  const AppConfig config = load_config(g);
  auto store = open_sqlite_store(config.db_path, config.store_options());
  ExportFilter filter;
  filter.start = parse_ts(since, "--since");
  if (!until.empty()) filter.end = parse_ts(until, "--until");
  if (!mo.empty()) filter.mo = mo;
  const auto records = store->export_intelligence(filter);
  if (out_path.empty() || out_path == "-") {
    write_ndjson(std::cout, records);
  } else {
    std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorCode::io_error, "cannot write " + out_path);
    write_ndjson(file, records);
  }
  spdlog::info("exported {} record(s)", records.size());
  return 0;
}

int cmd_purge(const Globals& g, const std::string& before) {
  const AppConfig config = load_config(g);
  auto store = open_sqlite_store(config.db_path, config.store_options());
  print({{"purged", store->purge_before(parse_ts(before, "--before"))}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("casectl"));

  CLI::App app{"Scam report interviews: API server and batch jobs"};
  app.require_subcommand(1);
  Globals g;
  if (const char* env = std::getenv("CASE_CONFIG")) g.config_path = env;
  app.add_option("-c,--config", g.config_path, "Config file (JSON or YAML); default $CASE_CONFIG");
  app.add_option("--db", g.db_path, "SQLite database; overrides $CASE_DB and the config");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.add_flag("--table", g.table, "Human-readable tables instead of JSON where supported");

  std::function<int()> run;

  auto* serve = app.add_subcommand("serve", "Run the /v1 HTTP API");
  std::string addr;
  serve->add_option("--addr", addr, "host:port; overrides $CASE_HTTP_ADDR");
  serve->callback([&] { run = [&] { return cmd_serve(g, addr); }; });

  auto* extract = app.add_subcommand("extract", "Extract reports from concluded sessions");
  std::size_t limit = 100, workers = 4;
  bool requeue = false;
  extract->add_option("--limit", limit, "Maximum sessions to process")->capture_default_str();
  extract->add_option("--workers", workers, "Parallel workers")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}))
      ->capture_default_str();
  extract->add_flag("--requeue-failed", requeue, "Retry sessions that hit the attempt cap");
  extract->callback([&] { run = [&] { return cmd_extract(g, limit, workers, requeue); }; });

  auto* eval = app.add_subcommand("eval", "Offline evaluations");
  eval->require_subcommand(1);
  auto* eval_ex = eval->add_subcommand("extractor", "Score the extractor on a golden set");
  std::string golden;
  eval_ex->add_option("--golden", golden, "Golden NDJSON")->required();
  eval_ex->callback([&] { run = [&] { return cmd_eval_extractor(g, golden); }; });

  auto* eval_safety = eval->add_subcommand("safety", "Run adversarial safety suites");
  std::vector<std::string> suites;
  eval_safety->add_option("--suite", suites, "Suite file (repeatable)")->required();
  eval_safety->callback([&] { run = [&] { return cmd_eval_safety(g, suites); }; });

  auto* eval_quality = eval->add_subcommand("quality", "Auto-rate concluded sessions");
  double rate = 0.1;
  std::string salt, quality_since, human;
  eval_quality->add_option("--rate", rate, "Human review sampling rate in (0, 1]")->required();
  eval_quality->add_option("--salt", salt, "Sampling salt")->required();
  eval_quality->add_option("--since", quality_since, "Only sessions created at or after");
  eval_quality->add_option("--human", human, "Human scores NDJSON for calibration");
  eval_quality->callback(
      [&] { run = [&] { return cmd_eval_quality(g, rate, salt, quality_since, human); }; });

  auto* redteam = app.add_subcommand("redteam", "Replay a script through a scratch session");
  std::string script;
  redteam->add_option("--script", script, "JSON/YAML list of user inputs")->required();
  redteam->callback([&] { run = [&] { return cmd_redteam(g, script); }; });

  auto* funnel_cmd = app.add_subcommand("funnel", "Questions-answered distribution");
  std::string funnel_since, funnel_until;
  bool exclude_opening = false;
  funnel_cmd->add_option("--since", funnel_since, "Sessions created at or after")->required();
  funnel_cmd->add_option("--until", funnel_until, "Sessions created before");
  funnel_cmd->add_flag("--exclude-opening", exclude_opening,
                       "Do not count the reply to the opening question");
  funnel_cmd->callback(
      [&] { run = [&] { return cmd_funnel(g, funnel_since, funnel_until, exclude_opening); }; });

  auto* export_cmd = app.add_subcommand("export", "Write intelligence records as NDJSON");
  std::string export_since, export_until, mo, out_path;
  export_cmd->add_option("--since", export_since, "Written at or after")->required();
  export_cmd->add_option("--until", export_until, "Written before");
  export_cmd->add_option("--mo", mo, "Only this possible_scam_mo");
  export_cmd->add_option("-o,--out", out_path, "Output file; default stdout");
  export_cmd->callback(
      [&] { run = [&] { return cmd_export(g, export_since, export_until, mo, out_path); }; });

  auto* purge = app.add_subcommand("purge", "Delete concluded sessions last updated before a time");
  std::string before;
  purge->add_option("--before", before, "Cutoff timestamp")->required();
  purge->callback([&] { run = [&] { return cmd_purge(g, before); }; });

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  try {
    return run();
  } catch (const Error& e) {
    spdlog::error("{} ({})", e.what(), to_string(e.code()));
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
