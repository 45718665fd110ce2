#pragma once

#include <span>
#include <string>
#include <vector>

#include "debias/stats.hpp"

namespace debias {

/// Sign convention of outcome items as stored on disk.
enum class Orientation { improvement, severity };

/**
 * Subjects x (treatments T_1..T_p, covariates X, outcome items Y_{p+1..m}).
 *
 * Column j of `treatments` holds T_{j+1}; the last column is the treatment of
 * interest T_p. `outcomes[t]` is the n x q item block at time point p + 1 + t.
 * Items are always held in improvement orientation (higher = better).
 */
struct LongitudinalDataset {
    std::vector<std::string> subject_ids;
    Matrix treatments;
    Matrix covariates;
    std::vector<std::string> covariate_names;
    std::vector<Matrix> outcomes;
    std::vector<std::string> item_names;

    Index n() const { return treatments.rows(); }
    Index p() const { return treatments.cols(); }
    Index q() const { return outcomes.empty() ? 0 : outcomes.front().cols(); }
    Index r() const { return covariates.cols(); }
    Index m() const { return p() + static_cast<Index>(outcomes.size()); }
    Index time_points() const { return static_cast<Index>(outcomes.size()); }

    Vector current_treatment() const { return treatments.col(p() - 1); }
    Vector first_treatment() const { return treatments.col(0); }

    /// Structural checks shared by every entry point. `min_subjects` is 20 at ingestion.
    void validate(Index min_subjects = 20) const {
        const Index rows = n();
        if (p() < 2) fail(ErrorCode::Validation, "at least two treatment columns (t1, t2) are required");
        if (outcomes.empty()) fail(ErrorCode::Validation, "no outcome time points after the current treatment");
        if (rows < min_subjects) {
            fail(ErrorCode::Validation, "need at least " + std::to_string(min_subjects) + " complete subjects, got " +
                                            std::to_string(rows));
        }
        if (static_cast<Index>(subject_ids.size()) != rows) fail(ErrorCode::Validation, "subject_id count mismatch");
        if (covariates.rows() != rows) fail(ErrorCode::Validation, "covariate row count mismatch");
        if (static_cast<Index>(covariate_names.size()) != covariates.cols()) {
            fail(ErrorCode::Validation, "covariate name count mismatch");
        }
        const Index items = q();
        if (items < 1) fail(ErrorCode::Validation, "no outcome items");
        if (static_cast<Index>(item_names.size()) != items) fail(ErrorCode::Validation, "item name count mismatch");
        for (std::size_t t = 0; t < outcomes.size(); ++t) {
            if (outcomes[t].rows() != rows || outcomes[t].cols() != items) {
                fail(ErrorCode::Validation, "outcome block " + std::to_string(t) + " has inconsistent shape");
            }
            if (!outcomes[t].allFinite()) fail(ErrorCode::Validation, "non-finite outcome values");
        }
        if (!treatments.allFinite() || !covariates.allFinite()) fail(ErrorCode::Validation, "non-finite values");
    }

    LongitudinalDataset subset(std::span<const Index> rows) const {
        LongitudinalDataset out;
        const Index k = static_cast<Index>(rows.size());
        out.subject_ids.reserve(rows.size());
        out.treatments.resize(k, p());
        out.covariates.resize(k, r());
        out.outcomes.assign(outcomes.size(), Matrix(k, q()));
        for (Index i = 0; i < k; ++i) {
            const Index src = rows[static_cast<std::size_t>(i)];
            if (src < 0 || src >= n()) fail(ErrorCode::IndexOutOfRange, "subset row out of range");
            out.subject_ids.push_back(subject_ids[static_cast<std::size_t>(src)]);
            out.treatments.row(i) = treatments.row(src);
            out.covariates.row(i) = covariates.row(src);
            for (std::size_t t = 0; t < outcomes.size(); ++t) out.outcomes[t].row(i) = outcomes[t].row(src);
        }
        out.covariate_names = covariate_names;
        out.item_names = item_names;
        return out;
    }
};

}  // namespace debias
