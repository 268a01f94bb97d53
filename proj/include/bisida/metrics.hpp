#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/image.hpp"

namespace bisida {

// counts(g, p) = number of pixels with ground truth g predicted as p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes) : c_(num_classes), counts_(num_classes * num_classes, 0)
    {
        if (num_classes == 0) throw ValidationError("confusion matrix: zero classes");
    }

    std::size_t num_classes() const { return c_; }
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * c_ + pred]; }

    std::uint64_t total() const
    {
        std::uint64_t t = 0;
        for (auto v : counts_) t += v;
        return t;
    }

    void accumulate(const LabelMap& pred, const LabelMap& gt)
    {
        if (pred.height != gt.height || pred.width != gt.width) {
            throw ShapeError("confusion matrix: prediction " + std::to_string(pred.height) + "x" +
                             std::to_string(pred.width) + " vs ground truth " + std::to_string(gt.height) + "x" +
                             std::to_string(gt.width));
        }
        for (std::size_t i = 0; i < gt.labels.size(); ++i) {
            const std::size_t g = gt.labels[i];
            const std::size_t p = pred.labels[i];
            if (g >= c_ || p >= c_) {
                throw ValidationError("confusion matrix: label out of range at pixel " + std::to_string(i));
            }
        }
        for (std::size_t i = 0; i < gt.labels.size(); ++i) ++counts_[gt.labels[i] * c_ + pred.labels[i]];
    }

    void merge(const ConfusionMatrix& other)
    {
        if (other.c_ != c_) throw ShapeError("confusion matrix: class count mismatch on merge");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t c_;
    std::vector<std::uint64_t> counts_;
};

struct IouReport {
    // nullopt marks a class with zero union (absent from both prediction and ground truth).
    std::vector<std::optional<double>> per_class;
    double miou = 0.0;
    double pixel_accuracy = 0.0;
};

enum class AbsentClassPolicy { exclude, score_zero };

// IoU_c = TP / (TP + FP + FN); mIoU averages present classes by default.
inline IouReport iou(const ConfusionMatrix& cm, AbsentClassPolicy policy = AbsentClassPolicy::exclude)
{
    const std::size_t c = cm.num_classes();
    if (cm.total() == 0) throw ValidationError("iou: empty confusion matrix");
    IouReport r;
    double sum = 0.0;
    std::size_t present = 0;
    std::uint64_t diag = 0;
    for (std::size_t k = 0; k < c; ++k) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < c; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const std::uint64_t tp = cm.at(k, k);
        diag += tp;
        const std::uint64_t uni = row + col - tp;
        if (uni == 0) {
            r.per_class.push_back(std::nullopt);
            if (policy == AbsentClassPolicy::score_zero) ++present;
            continue;
        }
        const double v = static_cast<double>(tp) / static_cast<double>(uni);
        r.per_class.push_back(v);
        sum += v;
        ++present;
    }
    if (present == 0) throw ValidationError("iou: every class is absent");
    r.miou = sum / static_cast<double>(present);
    r.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(cm.total());
    return r;
}

// "class,iou" rows (absent classes print "-") followed by "miou,<value>".
inline void write_iou_csv(std::ostream& os, const IouReport& r, std::span<const std::string> names)
{
    os << "class,iou\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        os << (k < names.size() ? names[k] : std::to_string(k)) << ',';
        if (r.per_class[k]) {
            os << *r.per_class[k];
        } else {
            os << '-';
        }
        os << '\n';
    }
    os << "miou," << r.miou << '\n';
}

}  // namespace bisida
