#include "anprompt/records.hpp"

#include <fstream>

#include <json.hpp>

#include "anprompt/errors.hpp"

namespace anprompt {

using nlohmann::json;

std::string to_json_line(const StepRecord& r) {
  json j{{"kind", "step"}, {"step", r.step}, {"epoch", r.epoch}, {"ce", r.ce},       {"sim", r.sim},
         {"wa", r.wa},     {"gamma", r.gamma}, {"total", r.total}, {"lr", r.lr}};
  return j.dump();
}

std::string to_json_line(const EvalReport& r) {
  json j{{"kind", "eval"}, {"seed", r.seed},       {"base_acc", r.base_acc}, {"novel_acc", r.novel_acc},
         {"hm", r.hm},     {"n_base", r.n_base}, {"n_novel", r.n_novel}};
  return j.dump();
}

std::string to_json_line(const NoiseMetricReport& r) {
  json j{{"kind", "noise"}, {"perturbation", r.perturbation}, {"ts", r.ts},
         {"lpr", r.lpr},    {"as", r.as_},                    {"n_samples", r.n_samples}};
  return j.dump();
}

std::string to_json_line(const AblationResult& r) {
  json seeds = json::array();
  for (const auto& e : r.per_seed) seeds.push_back(json::parse(to_json_line(e)));
  json j{{"kind", "ablation"}, {"study", r.study}, {"row", r.row},          {"base", r.base},
         {"novel", r.novel},   {"hm", r.hm},       {"per_seed", seeds}};
  return j.dump();
}

namespace {

EvalReport eval_from(const json& j) {
  EvalReport e;
  e.seed = j.at("seed").get<std::uint64_t>();
  e.base_acc = j.at("base_acc").get<double>();
  e.novel_acc = j.at("novel_acc").get<double>();
  e.hm = j.at("hm").get<double>();
  e.n_base = j.at("n_base").get<int>();
  e.n_novel = j.at("n_novel").get<int>();
  return e;
}

}  // namespace

RecordFile read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  RecordFile out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw ParseError(where + ": record is not an object");
      const std::string kind = j.value("kind", std::string(j.contains("step") ? "step" : ""));
      if (kind == "step") {
        StepRecord r;
        r.step = j.at("step").get<int>();
        r.epoch = j.at("epoch").get<int>();
        r.ce = j.at("ce").get<double>();
        r.sim = j.at("sim").get<double>();
        r.wa = j.at("wa").get<double>();
        r.gamma = j.at("gamma").get<double>();
        r.total = j.at("total").get<double>();
        r.lr = j.at("lr").get<double>();
        out.steps.push_back(r);
      } else if (kind == "eval") {
        out.evals.push_back(eval_from(j));
      } else if (kind == "noise") {
        NoiseMetricReport r;
        r.perturbation = j.at("perturbation").get<std::string>();
        r.ts = j.at("ts").get<double>();
        r.lpr = j.at("lpr").get<double>();
        r.as_ = j.at("as").get<double>();
        r.n_samples = j.at("n_samples").get<int>();
        out.noise.push_back(r);
      } else if (kind == "ablation") {
        AblationResult r;
        r.study = j.at("study").get<std::string>();
        r.row = j.at("row").get<std::string>();
        r.base = j.at("base").get<double>();
        r.novel = j.at("novel").get<double>();
        r.hm = j.at("hm").get<double>();
        for (const auto& e : j.value("per_seed", json::array())) r.per_seed.push_back(eval_from(e));
        out.ablations.push_back(r);
      } else if (kind == "diverged") {
        ++out.other;
      } else {
        throw ParseError(where + ": unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw FileError("cannot append to " + path.string());
  out << line << "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << text;
}

}  // namespace anprompt
