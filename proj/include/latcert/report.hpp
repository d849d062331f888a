#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "latcert/attacks.hpp"
#include "latcert/certifier.hpp"
#include "latcert/corpus.hpp"

namespace latcert {

inline constexpr const char* kToolVersion = "0.3.0";

/// One JSON object per record, then {"summary": {...}} on the last line.
std::string format_certification_report(const CertificationRun& run);
std::string certification_summary_csv_header();
std::string certification_summary_csv_row(const CertificationSummary& s);

/// One JSON object per outcome (adversarial tokens as words), then a summary line.
std::string format_attack_report(const AttackRun& run, AttackKind kind, const Vocabulary& vocab);
std::string attack_summary_csv(const AttackSummary& s, AttackKind kind);

/// Provenance of one CLI invocation, written as manifest.json.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;
  double wall_seconds = 0.0;
};

std::string format_manifest(const RunManifest& m);

}  // namespace latcert
