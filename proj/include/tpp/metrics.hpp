#ifndef TPP_METRICS_HPP
#define TPP_METRICS_HPP

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpp/matrix.hpp"

namespace tpp {

struct EvalReport {
  std::string metric;                        // "map" or "accuracy"
  std::vector<std::string> class_names;
  std::vector<double> per_class;             // AP or recall; -1 marks an excluded class
  std::vector<std::string> excluded_classes; // mAP only: classes with no positives
  double aggregate = 0.0;                    // mean over the included classes
  Matrix confusion;                          // accuracy only: confusion[truth][predicted]
};

// Mean average precision over classes. Per class, videos are ranked by
// descending score (ties broken by ascending id) and AP is the mean of the
// precision at each positive's rank. Classes without positives are excluded
// from the mean and reported.
inline EvalReport evaluate_map(const Matrix& scores,
                               std::span<const std::vector<std::size_t>> label_sets,
                               std::span<const std::string> ids,
                               std::span<const std::string> class_names) {
  const std::size_t n = scores.rows();
  const std::size_t c = scores.cols();
  if (label_sets.size() != n || ids.size() != n)
    throw std::invalid_argument("evaluate_map: one label set and id per scored video");
  if (class_names.size() != c)
    throw std::invalid_argument("evaluate_map: class name count must match score columns");

  EvalReport report;
  report.metric = "map";
  report.class_names.assign(class_names.begin(), class_names.end());
  report.per_class.assign(c, -1.0);

  std::vector<std::size_t> order(n);
  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores(a, cls) != scores(b, cls)) return scores(a, cls) > scores(b, cls);
      return ids[a] < ids[b];
    });

    std::size_t positives_seen = 0;
    double precision_sum = 0.0;
    std::size_t total_positives = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      const auto& labels = label_sets[order[rank]];
      const bool relevant = std::find(labels.begin(), labels.end(), cls) != labels.end();
      if (relevant) {
        ++positives_seen;
        precision_sum +=
            static_cast<double>(positives_seen) / static_cast<double>(rank + 1);
      }
    }
    total_positives = positives_seen;
    if (total_positives == 0) {
      report.excluded_classes.push_back(report.class_names[cls]);
      continue;
    }
    const double ap = precision_sum / static_cast<double>(total_positives);
    report.per_class[cls] = ap;
    sum += ap;
    ++included;
  }
  if (included == 0) throw std::invalid_argument("evaluate_map: no class has positives");
  report.aggregate = sum / static_cast<double>(included);
  return report;
}

// Class-balanced accuracy: the mean over classes of per-class recall. Every
// class must appear in the ground truth.
inline EvalReport evaluate_accuracy(std::span<const std::size_t> predictions,
                                    std::span<const std::size_t> labels,
                                    std::span<const std::string> class_names) {
  const std::size_t n = labels.size();
  const std::size_t c = class_names.size();
  if (predictions.size() != n)
    throw std::invalid_argument("evaluate_accuracy: one prediction per label");

  EvalReport report;
  report.metric = "accuracy";
  report.class_names.assign(class_names.begin(), class_names.end());
  report.per_class.assign(c, 0.0);
  report.confusion = Matrix(c, c);

  std::vector<std::size_t> totals(c, 0);
  std::vector<std::size_t> correct(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c || predictions[i] >= c)
      throw std::invalid_argument("evaluate_accuracy: class index out of range");
    ++totals[labels[i]];
    if (predictions[i] == labels[i]) ++correct[labels[i]];
    report.confusion(labels[i], predictions[i]) += 1.0;
  }

  double sum = 0.0;
  for (std::size_t cls = 0; cls < c; ++cls) {
    if (totals[cls] == 0)
      throw std::invalid_argument("evaluate_accuracy: class '" +
                                  report.class_names[cls] + "' has no samples");
    report.per_class[cls] =
        static_cast<double>(correct[cls]) / static_cast<double>(totals[cls]);
    sum += report.per_class[cls];
  }
  report.aggregate = sum / static_cast<double>(c);
  return report;
}

}  // namespace tpp

#endif  // TPP_METRICS_HPP
