#pragma once

#include <vector>

#include "dualprompt/volume/volume.hpp"

namespace dualprompt {

// 2|A∩B| / (|A|+|B|). Two empty masks score 1.0: correctly predicting the
// absence of a structure counts as agreement.
double dice_score(const Mask& pred, const Mask& gt);

struct SurvivalLabel {
    double time = 0.0;  // event or censoring time, > 0
    int event = 0;      // 1 = event observed, 0 = censored
};

// Harrell's concordance index. Comparable pairs are (i, j) with
// time_i < time_j and event_i = 1; risk_i > risk_j scores 1, a risk tie
// scores 0.5. Throws when no pair is comparable.
double concordance_index(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels);

// Spearman rank correlation (average ranks on ties).
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dualprompt
