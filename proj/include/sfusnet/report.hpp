#pragma once

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfusnet/metrics.hpp"

namespace sfus {

struct ClassMetrics {
  MetricValue precision;
  MetricValue sensitivity;
  MetricValue specificity;
};

struct FoldEntry {
  index_t fold = 0;
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
};

struct ClassAggregate {
  MeanStd precision;
  MeanStd sensitivity;
  MeanStd specificity;
};

// Per-fold metrics plus the mean±std aggregate over folds.
struct FoldReport {
  std::string model;
  std::vector<std::string> class_names;
  std::vector<FoldEntry> folds;
  bool has_aggregate = false;  // requires >= 2 folds
  MeanStd accuracy;
  std::vector<ClassAggregate> per_class;
};

inline FoldReport build_fold_report(const std::string& model,
                                    const std::vector<std::string>& class_names,
                                    const std::vector<ConfusionMatrix>& fold_matrices) {
  SFUS_CHECK(!fold_matrices.empty(), "report needs at least one fold");
  const index_t K = static_cast<index_t>(class_names.size());
  FoldReport rep;
  rep.model = model;
  rep.class_names = class_names;
  for (std::size_t f = 0; f < fold_matrices.size(); ++f) {
    const ConfusionMatrix& cm = fold_matrices[f];
    SFUS_CHECK(cm.k == K, "fold " << f << " confusion matrix has " << cm.k << " classes, want "
                                  << K);
    FoldEntry entry;
    entry.fold = static_cast<index_t>(f);
    entry.accuracy = overall_accuracy(cm);
    for (index_t c = 0; c < K; ++c) {
      const ConfusionCounts counts = ovr_counts(cm, c);
      entry.per_class.push_back(
          {metric_precision(counts), metric_sensitivity(counts), metric_specificity(counts)});
    }
    rep.folds.push_back(std::move(entry));
  }
  if (rep.folds.size() >= 2) {
    rep.has_aggregate = true;
    auto collect = [&](auto getter) {
      std::vector<double> vals;
      for (const auto& f : rep.folds) vals.push_back(getter(f));
      return aggregate_folds(vals);
    };
    rep.accuracy = collect([](const FoldEntry& f) { return f.accuracy; });
    for (index_t c = 0; c < K; ++c) {
      ClassAggregate agg;
      agg.precision = collect([&](const FoldEntry& f) {
        return f.per_class[static_cast<std::size_t>(c)].precision.value;
      });
      agg.sensitivity = collect([&](const FoldEntry& f) {
        return f.per_class[static_cast<std::size_t>(c)].sensitivity.value;
      });
      agg.specificity = collect([&](const FoldEntry& f) {
        return f.per_class[static_cast<std::size_t>(c)].specificity.value;
      });
      rep.per_class.push_back(agg);
    }
  }
  return rep;
}

// "92.89%(±0.42)" from mean 0.9289, std 0.0042.
inline std::string format_pct(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f%%(±%.2f)", mean * 100.0, stddev * 100.0);
  return buf;
}

inline std::string format_pct(const MeanStd& ms) { return format_pct(ms.mean, ms.stddev); }

// Accuracy table plus the per-class precision/sensitivity/specificity table.
inline std::string emit_table(const FoldReport& rep) {
  std::ostringstream oss;
  oss << "Model\tAccuracy\n";
  if (rep.has_aggregate) {
    oss << rep.model << "\t" << format_pct(rep.accuracy) << "\n";
  } else {
    oss << rep.model << "\t" << format_pct(rep.folds[0].accuracy, 0.0) << " (single fold)\n";
  }
  oss << "\nModel\tType\tPrecision\tSensitivity\tSpecificity\n";
  for (std::size_t c = 0; c < rep.class_names.size(); ++c) {
    oss << (c == 0 ? rep.model : "") << "\t" << rep.class_names[c] << "\t";
    if (rep.has_aggregate) {
      oss << format_pct(rep.per_class[c].precision) << "\t"
          << format_pct(rep.per_class[c].sensitivity) << "\t"
          << format_pct(rep.per_class[c].specificity) << "\n";
    } else {
      const auto& m = rep.folds[0].per_class[c];
      oss << format_pct(m.precision.value, 0.0) << "\t" << format_pct(m.sensitivity.value, 0.0)
          << "\t" << format_pct(m.specificity.value, 0.0) << "\n";
    }
  }
  oss << "\nPer-fold accuracy:";
  for (const auto& f : rep.folds) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %.4f", f.accuracy);
    oss << buf;
  }
  oss << "\n";
  return oss.str();
}

// Columns: model, fold, class, metric, value (full precision; fold "agg" rows
// carry the mean and std).
inline std::string emit_csv(const FoldReport& rep) {
  std::ostringstream oss;
  oss << "model,fold,class,metric,value\n";
  oss << std::setprecision(17);
  for (const auto& f : rep.folds) {
    oss << rep.model << "," << f.fold << ",overall,accuracy," << f.accuracy << "\n";
    for (std::size_t c = 0; c < rep.class_names.size(); ++c) {
      const auto& m = f.per_class[c];
      oss << rep.model << "," << f.fold << "," << rep.class_names[c] << ",precision,"
          << m.precision.value << "\n";
      oss << rep.model << "," << f.fold << "," << rep.class_names[c] << ",sensitivity,"
          << m.sensitivity.value << "\n";
      oss << rep.model << "," << f.fold << "," << rep.class_names[c] << ",specificity,"
          << m.specificity.value << "\n";
    }
  }
  if (rep.has_aggregate) {
    oss << rep.model << ",agg,overall,accuracy_mean," << rep.accuracy.mean << "\n";
    oss << rep.model << ",agg,overall,accuracy_std," << rep.accuracy.stddev << "\n";
    for (std::size_t c = 0; c < rep.class_names.size(); ++c) {
      const auto& a = rep.per_class[c];
      oss << rep.model << ",agg," << rep.class_names[c] << ",precision_mean," << a.precision.mean
          << "\n";
      oss << rep.model << ",agg," << rep.class_names[c] << ",precision_std," << a.precision.stddev
          << "\n";
      oss << rep.model << ",agg," << rep.class_names[c] << ",sensitivity_mean,"
          << a.sensitivity.mean << "\n";
      oss << rep.model << ",agg," << rep.class_names[c] << ",sensitivity_std,"
          << a.sensitivity.stddev << "\n";
      oss << rep.model << ",agg," << rep.class_names[c] << ",specificity_mean,"
          << a.specificity.mean << "\n";
      oss << rep.model << ",agg," << rep.class_names[c] << ",specificity_std,"
          << a.specificity.stddev << "\n";
    }
  }
  return oss.str();
}

inline nlohmann::json metric_to_json(const MetricValue& m) {
  nlohmann::json j;
  j["value"] = m.value;
  j["defined"] = m.defined;
  return j;
}

inline MetricValue metric_from_json(const nlohmann::json& j) {
  return {j.at("value").get<double>(), j.at("defined").get<bool>()};
}

inline nlohmann::json report_to_json(const FoldReport& rep) {
  nlohmann::json j;
  j["model"] = rep.model;
  j["classes"] = rep.class_names;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : rep.folds) {
    nlohmann::json jf;
    jf["fold"] = f.fold;
    jf["accuracy"] = f.accuracy;
    nlohmann::json pc = nlohmann::json::object();
    for (std::size_t c = 0; c < rep.class_names.size(); ++c) {
      pc[rep.class_names[c]] = {{"precision", metric_to_json(f.per_class[c].precision)},
                                {"sensitivity", metric_to_json(f.per_class[c].sensitivity)},
                                {"specificity", metric_to_json(f.per_class[c].specificity)}};
    }
    jf["per_class"] = std::move(pc);
    j["folds"].push_back(std::move(jf));
  }
  if (rep.has_aggregate) {
    auto ms = [](const MeanStd& m) {
      return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}};
    };
    nlohmann::json agg;
    agg["accuracy"] = ms(rep.accuracy);
    nlohmann::json pc = nlohmann::json::object();
    for (std::size_t c = 0; c < rep.class_names.size(); ++c) {
      pc[rep.class_names[c]] = {{"precision", ms(rep.per_class[c].precision)},
                                {"sensitivity", ms(rep.per_class[c].sensitivity)},
                                {"specificity", ms(rep.per_class[c].specificity)}};
    }
    agg["per_class"] = std::move(pc);
    j["aggregate"] = std::move(agg);
  }
  return j;
}

inline FoldReport report_from_json(const nlohmann::json& j) {
  FoldReport rep;
  rep.model = j.at("model").get<std::string>();
  rep.class_names = j.at("classes").get<std::vector<std::string>>();
  for (const auto& jf : j.at("folds")) {
    FoldEntry f;
    f.fold = jf.at("fold").get<index_t>();
    f.accuracy = jf.at("accuracy").get<double>();
    for (const auto& name : rep.class_names) {
      const auto& pc = jf.at("per_class").at(name);
      f.per_class.push_back({metric_from_json(pc.at("precision")),
                             metric_from_json(pc.at("sensitivity")),
                             metric_from_json(pc.at("specificity"))});
    }
    rep.folds.push_back(std::move(f));
  }
  if (j.contains("aggregate")) {
    rep.has_aggregate = true;
    auto ms = [](const nlohmann::json& m) {
      return MeanStd{m.at("mean").get<double>(), m.at("std").get<double>()};
    };
    rep.accuracy = ms(j.at("aggregate").at("accuracy"));
    for (const auto& name : rep.class_names) {
      const auto& pc = j.at("aggregate").at("per_class").at(name);
      rep.per_class.push_back(
          {ms(pc.at("precision")), ms(pc.at("sensitivity")), ms(pc.at("specificity"))});
    }
  }
  return rep;
}

enum class ReportFormat { kTable, kCsv, kJson };

inline std::string emit_report(const FoldReport& rep, ReportFormat format) {
  switch (format) {
    case ReportFormat::kTable: return emit_table(rep);
    case ReportFormat::kCsv: return emit_csv(rep);
    case ReportFormat::kJson: return report_to_json(rep).dump(2) + "\n";
  }
  SFUS_THROW(Error, "unknown report format");
}

}  // namespace sfus
