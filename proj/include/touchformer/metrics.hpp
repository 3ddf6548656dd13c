#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace touchformer {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;

    int classes() const { return static_cast<int>(counts.rows()); }
    long total() const { return counts.sum(); }
    long support(int c) const { return counts.row(c).sum(); }
    double recall(int c) const;
};

double accuracy(std::span<const int> preds, std::span<const int> labels);

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int num_classes);

// Geometric mean of per-class recalls over classes that have support.
double g_mean(const ConfusionMatrix& cm);

// "true\pred,<c0>,<c1>,..." header then one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names = {});

}  // namespace touchformer
