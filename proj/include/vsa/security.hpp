#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vsa/cpf.hpp"
#include "vsa/network.hpp"
#include "vsa/powerflow.hpp"
#include "vsa/qlimits.hpp"

namespace vsa {

// ---------------------------------------------------------------------------
// Piecewise-linear post-contingency tracking

enum class ActiveSet { PQ, NQ, PV, NV };  // toward Qmax, toward Qmin, held at Qmax, held at Qmin

std::string_view to_string(ActiveSet s);

struct ActiveEntry {
    std::size_t bus = 0;  // bus position
    ActiveSet set = ActiveSet::PQ;
    double gradient = 0.0;  // dQ/dK for PQ/NQ, d|V|/dK for PV/NV
    double room = 0.0;      // Qmax - Qg, Qmin - Qg or Vsp - |V|
    double ratio = 0.0;     // room / gradient, > 0
};

struct LimitEvent {
    std::size_t bus = 0;
    ActiveSet set = ActiveSet::PQ;  // set the bus left: PQ/NQ hit a limit, PV/NV released
};

struct PiecewiseStep {
    double k = 0.0;   // K at the start of the step
    double dk = 0.0;  // chosen step
    std::vector<ActiveEntry> active;
    std::vector<LimitEvent> events;  // applied at K + dk
};

struct PiecewiseOptions {
    double severity = 1.0;  // K at which tracking stops
    double min_step = 1e-4;
    std::size_t max_steps = 500;
    /// Newton correction of the K = 1 prediction on the post-contingency network, Q limits on.
    /// A corrector that fails to converge is reported as divergence.
    bool correct_final = true;
};

struct PiecewiseTrace {
    BranchId branch = 0;
    std::vector<PiecewiseStep> steps;
    OperatingState predicted_state;          // linear prediction at the final K
    OperatingState final_state;              // corrected state when enabled, else the prediction
    std::vector<std::size_t> final_p_q;      // bus positions heading to Qmax in the last step
    std::vector<std::size_t> final_n_q;      // bus positions heading to Qmin in the last step
    double k_reached = 0.0;
};

/// Raised when the linearised trace meets a singular Jacobian before K reaches the severity.
class TraceDivergenceError : public Error {
  public:
    TraceDivergenceError(double k, const std::string& what) : Error(what), k_(k) {}
    double k() const noexcept { return k_; }

  private:
    double k_;
};

/// Tracks the outage of `branch` from K = 0 to the severity in linear segments broken at the
/// next generator limit event. Throws IslandingError, TraceDivergenceError, ValidationError.
PiecewiseTrace piecewise_post_contingency(const NetworkModel& model, const OperatingState& state, BranchId branch,
                                          const PiecewiseOptions& options = {});

/// Critical list for the post-contingency index: final P_Q (upper side) and N_Q (lower side).
CriticalGeneratorList tracked_critical_list(const NetworkModel& model, const PiecewiseTrace& trace);

// ---------------------------------------------------------------------------
// Screening and ranking

enum class VerdictOutcome { Assessed, Diverged, Islanding };

std::string_view to_string(VerdictOutcome o);

struct ContingencyVerdict {
    BranchId branch = 0;
    std::string label;
    VerdictOutcome outcome = VerdictOutcome::Assessed;
    double max_wvsi = 0.0;  // +inf when diverged
    std::optional<int> critical_bus;
    bool critical = false;
    int rank = 0;
    double w1 = 1.0;
    CriticalGeneratorList list;
    std::string detail;
    std::optional<double> delta_lambda;  // oracle fields, filled by evaluation
    std::optional<bool> actual_critical;
};

struct ScreeningOptions {
    double threshold = 0.75;
    AssessmentOptions assessment;
    PiecewiseOptions piecewise;
    unsigned threads = 0;  // 0: hardware concurrency
};

/// Screening threshold for a case: 0.85 for systems of 100 or more buses, else 0.75.
double default_screening_threshold(const NetworkModel& model);

/// Single contingency verdict. Never throws for islanding or divergence.
ContingencyVerdict assess_contingency(const NetworkModel& model, const OperatingState& state, BranchId branch,
                                      const LoadDirection& dir, const ScreeningOptions& options = {});

/// Verdicts for each branch, in input order. Runs in parallel over the branches.
std::vector<ContingencyVerdict> screen_contingencies(const NetworkModel& model, const OperatingState& state,
                                                     std::span<const BranchId> branches, const LoadDirection& dir,
                                                     const ScreeningOptions& options = {});

/// Divergence and islanding first, then descending WVSI, ties by branch id. Assigns ranks 1..N.
std::vector<ContingencyVerdict> rank_contingencies(std::vector<ContingencyVerdict> verdicts);

/// All in-service branches not excluded.
std::vector<BranchId> all_branches(const NetworkModel& model);

// ---------------------------------------------------------------------------
// Evaluation against the continuation oracle

struct EvaluationOptions {
    ScreeningOptions screening;
    double margin_threshold = 0.75;  // actual critical when the post-contingency margin is below
    CpfOptions cpf;
};

/// Margin threshold paired with default_screening_threshold: 0.9 for 100 or more buses, else 0.75.
double default_margin_threshold(const NetworkModel& model);

/// Screens the branches and fills the oracle fields from a post-contingency continuation trace.
/// Islanding and non-convergent post-contingency networks get a margin of 0.
std::vector<ContingencyVerdict> evaluate_contingencies(const NetworkModel& model, const OperatingState& state,
                                                       std::span<const BranchId> branches, const LoadDirection& dir,
                                                       const EvaluationOptions& options = {});


struct ConfusionMetrics {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    bool precision_undefined = false;  // no predicted positives
    bool recall_undefined = false;     // no actual positives
};

ConfusionMetrics confusion_from_counts(long tp, long fp, long fn, long tn);

/// Throws ValidationError on a length mismatch.
ConfusionMetrics confusion_metrics(std::span<const bool> predicted, std::span<const bool> actual);

struct WilcoxonResult {
    std::size_t n = 0;  // non-zero differences
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = 1.0;  // exact, two-sided
    double ci_low = 0.0;   // Hodges-Lehmann interval of the median difference
    double ci_high = 0.0;
    double confidence = 0.95;
    bool degenerate = false;  // all differences zero
};

/// Exact signed-rank test on a - b. Ties in |d| get average ranks; zeros are dropped.
/// Supports up to 25 non-zero differences (ValidationError beyond).
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double confidence = 0.95);

struct RankingComparison {
    std::vector<BranchId> branches;  // oracle top-N, smallest margin first
    std::vector<double> oracle_rank;
    std::vector<double> index_rank;  // 1..N by descending WVSI within the same branches
    WilcoxonResult test;
};

/// Takes the `top` most severe contingencies by oracle margin (ties by id) and compares their
/// order with the WVSI order. Verdicts must carry delta_lambda.
RankingComparison compare_rankings(std::span<const ContingencyVerdict> verdicts, std::size_t top = 10);

}  // namespace vsa
