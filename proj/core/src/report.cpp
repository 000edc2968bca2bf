#include "xfer/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace xfer {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

json metrics_json(const MetricsReport& m) {
  json j;
  if (m.frequency) j["frequency"] = *m.frequency;
  if (m.delay_s) j["delay_s"] = *m.delay_s;
  if (m.miss) j["miss"] = *m.miss;
  if (m.accuracy) j["accuracy"] = *m.accuracy;
  j["events"] = m.events;
  j["detected"] = m.detected;
  j["false_episodes"] = m.false_episodes;
  j["frames_follow"] = m.frames_follow;
  j["frames_change"] = m.frames_change;
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  if (j.contains("frequency")) m.frequency = j["frequency"].get<double>();
  if (j.contains("delay_s")) m.delay_s = j["delay_s"].get<double>();
  if (j.contains("miss")) m.miss = j["miss"].get<double>();
  if (j.contains("accuracy")) m.accuracy = j["accuracy"].get<double>();
  m.events = j.value("events", 0L);
  m.detected = j.value("detected", 0L);
  m.false_episodes = j.value("false_episodes", 0L);
  m.frames_follow = j.value("frames_follow", 0L);
  m.frames_change = j.value("frames_change", 0L);
  return m;
}

void write_results_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "b,method,frequency,delay,miss,score,accuracy,seed\n";
  for (const auto& row : report.rows) {
    out << row.b << ',' << row.method << ',' << cell(row.metrics.frequency) << ','
        << cell(row.metrics.delay_s) << ',' << cell(row.metrics.miss) << ','
        << cell(row.score) << ',' << cell(row.metrics.accuracy) << ',' << row.seed << '\n';
  }
}

void write_converted_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "method,sequence,frame,feature,input,converted,partner\n";
  for (const auto& cs : report.converted) {
    const int len = cs.features > 0 ? static_cast<int>(cs.input.size()) / cs.features : 0;
    for (int t = 0; t < len; ++t) {
      for (int k = 0; k < cs.features; ++k) {
        const std::size_t idx = static_cast<std::size_t>(t) * cs.features + k;
        out << cs.method << ',' << cs.sequence << ',' << t << ',' << k << ','
            << fmt(cs.input[idx]) << ',' << fmt(cs.converted[idx]) << ','
            << (std::isnan(cs.partner[idx]) ? std::string() : fmt(cs.partner[idx])) << '\n';
      }
    }
  }
}

}  // namespace

void emit_report(const ExperimentReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  write_results_csv(report, dir / "results.csv");
  write_converted_csv(report, dir / "converted_samples.csv");

  json j;
  j["config"] = report.config.to_text();
  j["failures"] = report.failures;
  j["rows"] = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["method"] = row.method;
    r["b"] = row.b;
    r["seed"] = row.seed;
    r["metrics"] = metrics_json(row.metrics);
    if (row.score) r["score"] = *row.score;
    r["curves"] = json::array();
    for (const auto& c : row.curves) {
      r["curves"].push_back(
          {{"step", c.step}, {"train_loss", c.train_loss}, {"holdout_loss", c.holdout_loss}});
    }
    j["rows"].push_back(std::move(r));
  }
  j["converted_samples"] = json::array();
  for (const auto& cs : report.converted) {
    std::vector<double> partner = cs.partner;  // JSON has no NaN; encode as null via sentinel
    json p = json::array();
    for (const double v : partner) {
      if (std::isnan(v)) {
        p.push_back(nullptr);
      } else {
        p.push_back(v);
      }
    }
    j["converted_samples"].push_back({{"method", cs.method},
                                      {"sequence", cs.sequence},
                                      {"features", cs.features},
                                      {"input", cs.input},
                                      {"converted", cs.converted},
                                      {"partner", std::move(p)}});
  }

  std::ofstream out(dir / "report.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report.json");
  out << j.dump(2) << '\n';
}

ExperimentReport load_report(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open " + json_path);
  json j;
  in >> j;

  ExperimentReport report;
  report.config = parse_config_text(j.at("config").get<std::string>(), json_path + "#config");
  report.failures = j.value("failures", std::vector<std::string>{});
  for (const auto& r : j.at("rows")) {
    GridRow row;
    row.method = r.at("method").get<std::string>();
    row.b = r.at("b").get<int>();
    row.seed = r.at("seed").get<std::uint64_t>();
    row.metrics = metrics_from_json(r.at("metrics"));
    if (r.contains("score")) row.score = r["score"].get<double>();
    for (const auto& c : r.value("curves", json::array())) {
      StepCurves sc;
      sc.step = c.at("step").get<std::string>();
      sc.train_loss = c.at("train_loss").get<std::vector<double>>();
      sc.holdout_loss = c.at("holdout_loss").get<std::vector<double>>();
      row.curves.push_back(std::move(sc));
    }
    report.rows.push_back(std::move(row));
  }
  for (const auto& c : j.value("converted_samples", json::array())) {
    ConvertedSample cs;
    cs.method = c.at("method").get<std::string>();
    cs.sequence = c.at("sequence").get<int>();
    cs.features = c.at("features").get<int>();
    cs.input = c.at("input").get<std::vector<double>>();
    cs.converted = c.at("converted").get<std::vector<double>>();
    for (const auto& v : c.at("partner")) {
      cs.partner.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                       : v.get<double>());
    }
    report.converted.push_back(std::move(cs));
  }
  return report;
}

}  // namespace xfer
