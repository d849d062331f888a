#include "latcert/report.hpp"

#include <json.hpp>

#include "latcert/io.hpp"

namespace latcert {

namespace {

using ojson = nlohmann::ordered_json;

ojson summary_json(const CertificationSummary& s) {
  ojson j;
  j["examples"] = s.examples;
  j["certified"] = s.certified;
  j["certified_correct"] = s.certified_correct;
  j["clean_correct"] = s.clean_correct;
  j["abstained"] = s.abstained;
  j["certified_accuracy"] = s.certified_accuracy;
  j["clean_accuracy"] = s.clean_accuracy;
  j["abstention_rate"] = s.abstention_rate;
  return j;
}

ojson summary_json(const AttackSummary& s) {
  ojson j;
  j["examples"] = s.examples;
  j["successes"] = s.successes;
  j["skipped"] = s.skipped;
  j["empirical_robust_accuracy"] = s.empirical_robust_accuracy;
  j["success_rate"] = s.success_rate;
  j["mean_queries"] = s.mean_queries;
  return j;
}

}  // namespace

std::string format_certification_report(const CertificationRun& run) {
  std::string out;
  for (const CertificationRecord& r : run.records) {
    ojson j;
    j["example_id"] = r.example_id;
    j["label"] = r.label;
    j["predicted"] = r.predicted ? ojson(*r.predicted) : ojson(nullptr);
    j["certified"] = r.certified;
    j["cls_a"] = r.cls_a;
    j["cnt_a"] = r.cnt_a;
    j["p_a_lower"] = r.p_a_lower;
    j["R"] = r.radius_r;
    j["R_hat"] = r.radius_r_hat;
    j["alpha"] = r.alpha;
    j["t1"] = r.t1;
    j["t2"] = r.t2;
    j["seed"] = r.seed;
    out += j.dump() + "\n";
  }
  ojson s;
  s["summary"] = summary_json(run.summary);
  out += s.dump() + "\n";
  return out;
}

std::string certification_summary_csv_header() {
  return "examples,certified,certified_correct,clean_correct,abstained,certified_accuracy,clean_accuracy,"
         "abstention_rate\n";
}

std::string certification_summary_csv_row(const CertificationSummary& s) {
  return std::to_string(s.examples) + "," + std::to_string(s.certified) + "," +
         std::to_string(s.certified_correct) + "," + std::to_string(s.clean_correct) + "," +
         std::to_string(s.abstained) + "," + format_double(s.certified_accuracy) + "," +
         format_double(s.clean_accuracy) + "," + format_double(s.abstention_rate) + "\n";
}

std::string format_attack_report(const AttackRun& run, AttackKind kind, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < run.outcomes.size(); ++i) {
    const AttackOutcome& o = run.outcomes[i];
    ojson j;
    j["example_id"] = o.example_id;
    j["attack"] = std::string(to_string(kind));
    j["label"] = o.label;
    j["clean_prediction"] = o.clean_prediction;
    j["prediction"] = o.prediction;
    j["success"] = o.success;
    j["queries"] = o.queries;
    if (i < run.skipped.size() && run.skipped[i]) j["skipped"] = true;
    ojson words = ojson::array();
    for (TokenId t : o.adversarial) words.push_back(vocab.word(t));
    j["adversarial"] = std::move(words);
    out += j.dump() + "\n";
  }
  ojson s;
  s["summary"] = summary_json(run.summary);
  s["summary"]["attack"] = std::string(to_string(kind));
  out += s.dump() + "\n";
  return out;
}

std::string attack_summary_csv(const AttackSummary& s, AttackKind kind) {
  return "attack,examples,successes,skipped,empirical_robust_accuracy,success_rate,mean_queries\n" +
         std::string(to_string(kind)) + "," + std::to_string(s.examples) + "," + std::to_string(s.successes) +
         "," + std::to_string(s.skipped) + "," + format_double(s.empirical_robust_accuracy) + "," +
         format_double(s.success_rate) + "," + format_double(s.mean_queries) + "\n";
}

std::string format_manifest(const RunManifest& m) {
  ojson j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  ojson config = ojson::object();
  for (const auto& [k, v] : m.config) config[k] = v;
  j["config"] = std::move(config);
  ojson seeds = ojson::object();
  for (const auto& [k, v] : m.seeds) seeds[k] = v;
  j["seeds"] = std::move(seeds);
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["wall_seconds"] = m.wall_seconds;
  return j.dump(2) + "\n";
}

}  // namespace latcert
