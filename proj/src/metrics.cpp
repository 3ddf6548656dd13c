#include "touchformer/metrics.hpp"

#include <cmath>
#include <sstream>

#include "touchformer/errors.hpp"

namespace touchformer {

double ConfusionMatrix::recall(int c) const {
    const long n = support(c);
    return n == 0 ? 0.0 : static_cast<double>(counts(c, c)) / static_cast<double>(n);
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) {
        throw ValidationError("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                              std::to_string(labels.size()) + " labels");
    }
    if (preds.empty()) throw ValidationError("accuracy: no samples");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int num_classes) {
    if (preds.size() != labels.size()) {
        throw ValidationError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                              std::to_string(labels.size()) + " labels");
    }
    if (num_classes <= 0) throw ValidationError("confusion: num_classes must be positive");
    ConfusionMatrix cm;
    cm.counts = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_classes, num_classes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (int v : {labels[i], preds[i]}) {
            if (v < 0 || v >= num_classes) {
                throw ValidationError("confusion: label " + std::to_string(v) + " at index " + std::to_string(i) +
                                      " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
        ++cm.counts(labels[i], preds[i]);
    }
    return cm;
}

double g_mean(const ConfusionMatrix& cm) {
    if (cm.classes() == 0 || cm.total() == 0) throw ValidationError("g_mean: empty confusion matrix");
    double product = 1.0;
    int counted = 0;
    for (int c = 0; c < cm.classes(); ++c) {
        if (cm.support(c) == 0) continue;
        product *= cm.recall(c);
        ++counted;
    }
    return std::pow(product, 1.0 / counted);
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    auto name = [&](int c) {
        return c < static_cast<int>(class_names.size()) ? class_names[c] : std::to_string(c);
    };
    std::ostringstream out;
    out << "true\\pred";
    for (int c = 0; c < cm.classes(); ++c) out << ',' << name(c);
    out << '\n';
    for (int r = 0; r < cm.classes(); ++r) {
        out << name(r);
        for (int c = 0; c < cm.classes(); ++c) out << ',' << cm.counts(r, c);
        out << '\n';
    }
    return out.str();
}

}  // namespace touchformer
