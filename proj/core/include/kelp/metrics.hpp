#pragma once

#include <map>
#include <string>
#include <vector>

#include "kelp/corpus.hpp"

namespace kelp {

struct LabelCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Precision/recall/F1 with stored confusion counts so every aggregate can be
// recomputed from the report alone. Zero denominators score zero.
struct MetricsReport {
  std::string task;
  std::vector<std::string> labels;
  std::map<std::string, LabelCounts> counts;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double micro_precision = 0, micro_recall = 0, micro_f1 = 0;

  std::string to_json() const;
};

double f1_score(double precision, double recall);

// Single-label multiclass scoring; micro scores collapse to accuracy.
MetricsReport classification_metrics(const std::string& task,
                                     const std::vector<std::string>& labels,
                                     const std::vector<std::string>& gold,
                                     const std::vector<std::string>& predicted);

// ---- sequence tagging -------------------------------------------------------

struct TypedSpan {
  Span span;
  std::string type;
  auto operator<=>(const TypedSpan&) const = default;
};

// Decodes B-/I-/O tags into typed spans. An I- continuing a different type
// (or following O) opens a new span.
std::vector<TypedSpan> decode_bio(const std::vector<std::string>& tags);

// Entity-level exact-match scoring: a predicted span counts only when start,
// end, and type all agree with a gold span of the same sentence.
MetricsReport span_exact_match_metrics(
    const std::string& task, const std::vector<std::string>& labels,
    const std::vector<std::vector<std::string>>& gold_tags,
    const std::vector<std::vector<std::string>>& predicted_tags);

}  // namespace kelp
