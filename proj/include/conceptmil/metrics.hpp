#pragma once

#include <span>
#include <vector>

#include "conceptmil/matrix.hpp"

namespace conceptmil {

// Mann-Whitney AUC over binary labels (0/1). Ties between a positive and a
// negative score count half. Throws ValidationError when only one class is
// present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Unweighted mean of one-vs-rest roc_auc per class; probs is N x K.
// Throws ValidationError when some class has no examples.
double macro_auc(const Matrix& probs, std::span<const int> labels);

// Fraction of rows whose argmax equals the label; argmax ties break toward
// the lowest class index.
double accuracy(const Matrix& probs, std::span<const int> labels);

// Macro-averaged F1 over argmax predictions. A class with zero precision+
// recall denominator contributes 0.
double macro_f1(const Matrix& probs, std::span<const int> labels);

}  // namespace conceptmil
