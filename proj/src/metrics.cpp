#include "latact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "latact/vocab.hpp"

namespace latact {

namespace {

bool contains_placeholder(const std::string& text, const std::string& slot) {
  std::string needle = "[" + slot + "]";
  for (const auto& w : split_words(text)) {
    if (w == needle) return true;
  }
  return false;
}

}  // namespace

int eval_inform(const DialogueRecord& dialogue, const std::vector<std::string>& generated,
                const World& world) {
  if (generated.size() != dialogue.turns.size()) {
    throw std::runtime_error("eval: " + std::to_string(generated.size()) + " responses for " +
                             std::to_string(dialogue.turns.size()) + " turns");
  }
  for (std::size_t t = 0; t < generated.size(); ++t) {
    if (!contains_placeholder(generated[t], "name")) continue;
    auto q = world.query(dialogue.domain, dialogue.turns[t].belief);
    if (q.count == 0) continue;
    const Entity* top = q.matches.front();
    bool ok = true;
    for (const auto& [slot, value] : dialogue.goal.constraints) {
      if (top->value(slot) != value) {
        ok = false;
        break;
      }
    }
    if (ok) return 1;
  }
  return 0;
}

int eval_success(const DialogueRecord& dialogue, const std::vector<std::string>& generated,
                 const World& world) {
  if (eval_inform(dialogue, generated, world) == 0) return 0;
  for (const auto& r : dialogue.goal.requests) {
    bool found = false;
    for (const auto& g : generated) {
      if (contains_placeholder(g, r)) {
        found = true;
        break;
      }
    }
    if (!found) return 0;
  }
  return 1;
}

double eval_bleu(const std::vector<std::string>& hypotheses,
                 const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) {
    throw std::runtime_error("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                             std::to_string(references.size()) + " references");
  }
  constexpr int kMaxN = 4;
  constexpr double kEps = 1e-9;
  std::size_t matched[kMaxN] = {0, 0, 0, 0};
  std::size_t total[kMaxN] = {0, 0, 0, 0};
  std::size_t hyp_len = 0, ref_len = 0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    std::vector<std::string> hyp = split_words(hypotheses[i]);
    std::vector<std::string> ref = split_words(references[i]);
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (int n = 1; n <= kMaxN; ++n) {
      if (hyp.size() < static_cast<std::size_t>(n)) break;
      std::map<std::string, int> ref_counts;
      if (ref.size() >= static_cast<std::size_t>(n)) {
        for (std::size_t j = 0; j + n <= ref.size(); ++j) {
          std::string gram;
          for (int k = 0; k < n; ++k) gram += (k ? "\x1f" : "") + ref[j + static_cast<std::size_t>(k)];
          ++ref_counts[gram];
        }
      }
      std::map<std::string, int> hyp_counts;
      for (std::size_t j = 0; j + n <= hyp.size(); ++j) {
        std::string gram;
        for (int k = 0; k < n; ++k) gram += (k ? "\x1f" : "") + hyp[j + static_cast<std::size_t>(k)];
        ++hyp_counts[gram];
      }
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += static_cast<std::size_t>(count);
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) {
          matched[n - 1] += static_cast<std::size_t>(std::min(count, it->second));
        }
      }
    }
  }

  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    double p = (matched[n] > 0 && total[n] > 0)
                   ? static_cast<double>(matched[n]) / static_cast<double>(total[n])
                   : kEps;
    log_sum += std::log(p);
  }
  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_sum / kMaxN);
}

double combined_score(double inform, double success, double bleu) {
  auto in_range = [](double v, const char* name) {
    if (v < 0.0 || v > 100.0) {
      throw std::runtime_error(std::string("combined score: ") + name + " outside [0,100]");
    }
  };
  in_range(inform, "inform");
  in_range(success, "success");
  in_range(bleu, "bleu");
  return (inform + success) * 0.5 + bleu;
}

PrfScores aggregate_act_f1(const std::vector<DialogueAct>& predicted,
                           const std::vector<DialogueAct>& gold) {
  if (predicted.size() != gold.size()) {
    throw std::runtime_error("act f1: prediction/gold length mismatch");
  }
  MicroF1 acc;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc.add(predicted[i], gold[i]);
  return acc.result();
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_tsv() const {
  std::string out;
  out += "inform\t" + fmt(inform) + "\n";
  out += "success\t" + fmt(success) + "\n";
  out += "bleu\t" + fmt(bleu) + "\n";
  out += "combined\t" + fmt(combined) + "\n";
  if (act_f1.has_value()) {
    out += "act_precision\t" + fmt(act_f1->precision) + "\n";
    out += "act_recall\t" + fmt(act_f1->recall) + "\n";
    out += "act_f1\t" + fmt(act_f1->f1) + "\n";
  }
  out += "dialogues\t" + std::to_string(dialogues) + "\n";
  out += "filter_fallbacks\t" + std::to_string(filter_fallbacks) + "\n";
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["inform"] = inform;
  j["success"] = success;
  j["bleu"] = bleu;
  j["combined"] = combined;
  if (act_f1.has_value()) {
    j["act_f1"] = {{"precision", act_f1->precision},
                   {"recall", act_f1->recall},
                   {"f1", act_f1->f1}};
  }
  j["dialogues"] = dialogues;
  j["filter_fallbacks"] = filter_fallbacks;
  auto breakdown_json = nlohmann::json::array();
  for (const auto& b : breakdown) {
    breakdown_json.push_back({{"domain", b.domain}, {"inform", b.inform}, {"success", b.success}});
  }
  j["breakdown"] = breakdown_json;
  return j.dump(2);
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << report.to_json() << "\n";
  std::ofstream tsv(path + ".tsv", std::ios::binary);
  if (!tsv) throw std::runtime_error("report: cannot write " + path + ".tsv");
  tsv << report.to_tsv();
}

}  // namespace latact
