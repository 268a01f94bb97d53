#pragma once

#include "bisida/segnet.hpp"

namespace bisida {

// Deep copy of the student with gradients disabled on every tensor.
inline SegNet init_teacher(const SegNet& student)
{
    SegNet teacher;
    teacher.num_classes = student.num_classes;
    teacher.width = student.width;
    for (const auto& p : student.params.entries()) {
        teacher.params.add(p.name, TensorF(p.tensor.dims(), p.tensor.data()), false);
    }
    return teacher;
}

// teacher <- eta * teacher + (1 - eta) * student, elementwise.
inline void ema_update(SegNet& teacher, const SegNet& student, double eta)
{
    if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("ema_update: eta must lie in [0, 1]");
    auto& te = teacher.params.entries();
    const auto& se = student.params.entries();
    if (te.size() != se.size()) throw ShapeError("ema_update: parameter count mismatch");
    for (std::size_t k = 0; k < te.size(); ++k) {
        if (te[k].name != se[k].name || te[k].tensor.dims() != se[k].tensor.dims()) {
            throw ShapeError("ema_update: mismatch at '" + te[k].name + "' " + to_string(te[k].tensor.dims()) +
                             " vs '" + se[k].name + "' " + to_string(se[k].tensor.dims()));
        }
    }
    // Blend in double: rounding the exact convex combination to float keeps
    // every weight inside [min(teacher, student), max(teacher, student)].
    for (std::size_t k = 0; k < te.size(); ++k) {
        auto& t = te[k].tensor;
        const auto& s = se[k].tensor;
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = static_cast<float>(eta * static_cast<double>(t[i]) + (1.0 - eta) * static_cast<double>(s[i]));
        }
    }
}

}  // namespace bisida
