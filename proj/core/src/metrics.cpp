#include "kelp/metrics.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace kelp {

namespace {

double safe_div(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void finalize(MetricsReport& r) {
  std::size_t tp = 0, fp = 0, fn = 0;
  double psum = 0, rsum = 0, fsum = 0;
  for (const auto& label : r.labels) {
    const LabelCounts& c = r.counts[label];
    const double p = safe_div(c.tp, c.tp + c.fp);
    const double rec = safe_div(c.tp, c.tp + c.fn);
    psum += p;
    rsum += rec;
    fsum += f1_score(p, rec);
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  const double nl = static_cast<double>(r.labels.size());
  r.macro_precision = nl ? psum / nl : 0.0;
  r.macro_recall = nl ? rsum / nl : 0.0;
  r.macro_f1 = nl ? fsum / nl : 0.0;
  r.micro_precision = safe_div(tp, tp + fp);
  r.micro_recall = safe_div(tp, tp + fn);
  r.micro_f1 = f1_score(r.micro_precision, r.micro_recall);
}

}  // namespace

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["labels"] = labels;
  j["counts"] = nlohmann::json::object();
  for (const auto& [label, c] : counts) {
    j["counts"][label] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  }
  j["macro"] = {{"precision", macro_precision},
                {"recall", macro_recall},
                {"f1", macro_f1}};
  j["micro"] = {{"precision", micro_precision},
                {"recall", micro_recall},
                {"f1", micro_f1}};
  return j.dump(2);
}

MetricsReport classification_metrics(const std::string& task,
                                     const std::vector<std::string>& labels,
                                     const std::vector<std::string>& gold,
                                     const std::vector<std::string>& predicted) {
  if (gold.size() != predicted.size()) {
    throw DimensionError("metrics: " + std::to_string(gold.size()) +
                         " gold labels vs " + std::to_string(predicted.size()) +
                         " predictions");
  }
  MetricsReport r;
  r.task = task;
  r.labels = labels;
  for (const auto& label : labels) r.counts[label];  // materialize zeros
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == predicted[i]) {
      r.counts[gold[i]].tp += 1;
    } else {
      r.counts[predicted[i]].fp += 1;
      r.counts[gold[i]].fn += 1;
    }
  }
  finalize(r);
  return r;
}

std::vector<TypedSpan> decode_bio(const std::vector<std::string>& tags) {
  std::vector<TypedSpan> spans;
  std::size_t start = 0;
  std::string open;
  auto close = [&](std::size_t end) {
    if (!open.empty()) {
      spans.push_back({{start, end}, open});
      open.clear();
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t == "O" || t.size() < 3 || t[1] != '-') {
      close(i);
      continue;
    }
    const std::string type = t.substr(2);
    if (t[0] == 'B' || open != type) {
      close(i);
      open = type;
      start = i;
    }
  }
  close(tags.size());
  return spans;
}

MetricsReport span_exact_match_metrics(
    const std::string& task, const std::vector<std::string>& labels,
    const std::vector<std::vector<std::string>>& gold_tags,
    const std::vector<std::vector<std::string>>& predicted_tags) {
  if (gold_tags.size() != predicted_tags.size()) {
    throw DimensionError("span metrics: " + std::to_string(gold_tags.size()) +
                         " gold sentences vs " +
                         std::to_string(predicted_tags.size()) + " predicted");
  }
  MetricsReport r;
  r.task = task;
  r.labels = labels;
  for (const auto& label : labels) r.counts[label];
  for (std::size_t i = 0; i < gold_tags.size(); ++i) {
    const auto gold = decode_bio(gold_tags[i]);
    const auto pred = decode_bio(predicted_tags[i]);
    const std::set<TypedSpan> gold_set(gold.begin(), gold.end());
    const std::set<TypedSpan> pred_set(pred.begin(), pred.end());
    for (const auto& p : pred_set) {
      if (gold_set.count(p)) {
        r.counts[p.type].tp += 1;
      } else {
        r.counts[p.type].fp += 1;
      }
    }
    for (const auto& g : gold_set) {
      if (!pred_set.count(g)) r.counts[g.type].fn += 1;
    }
  }
  finalize(r);
  return r;
}

}  // namespace kelp
