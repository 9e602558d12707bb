#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vsa/hpvsm.hpp"
#include "vsa/network.hpp"
#include "vsa/powerflow.hpp"
#include "vsa/telemetry.hpp"

namespace vsa {

/// Fewer than three distinct Q_T values in the fitting window.
class DegenerateWindowError : public Error {
  public:
    using Error::Error;
};

/// Quadratic reactive power reserve model RPR(Q_T) = a Q_T^2 + b Q_T + c for one generator.
/// Fitted on a centred and scaled abscissa x = (Q_T - center) / scale for conditioning.
struct RprModel {
    GeneratorId gen = 0;
    int bus_id = 0;
    double center = 0.0;
    double scale = 1.0;
    double qa = 0.0, qb = 0.0, qc = 0.0;  // coefficients in x
    double residual = 0.0;                // weighted RMS of the fit
    double latest_q_total = 0.0;
    double latest_rpr = 0.0;
    bool at_limit = false;
    std::optional<double> q_cr;  // realistic root on the upper side of the latest Q_T

    static RprModel from_coefficients(double a, double b, double c);

    double a() const;
    double b() const;
    double c() const;
    double evaluate(double q_total) const;
};

struct RprFitOptions {
    /// Weight of a sample `age` snapshots old is forgetting^age. 1 gives uniform weights.
    double forgetting = 1.0;
};

/// Least squares fit of (Q_T, RPR) pairs. Throws DegenerateWindowError.
RprModel fit_rpr(std::span<const double> q_total, std::span<const double> rpr, const RprFitOptions& options = {});

/// Fit for generator `gen` over the window; fills the latest reserve, limit flag and upper root.
RprModel fit_rpr_model(const MeasurementWindow& window, const NetworkModel& model, GeneratorId gen,
                       const RprFitOptions& options = {});

enum class RootSide { Upper, Lower };

/// Realistic root of the reserve model relative to `q_total`. Complex roots are discarded;
/// if two roots qualify, the one nearest `q_total` wins. |a| < 1e-9 falls back to the line.
std::optional<double> predict_qcr(const RprModel& model, double q_total, RootSide side = RootSide::Upper);

struct CriticalGenerator {
    GeneratorId gen = 0;
    int bus_id = 0;
    double q_cr = 0.0;  // NaN when the entry comes from contingency tracking rather than a fit
    RootSide side = RootSide::Upper;
};

struct CriticalGeneratorList {
    std::vector<CriticalGenerator> items;  // ascending Q_cr
    double threshold = 0.01;
    double q_total = 0.0;

    bool empty() const { return items.empty(); }
    std::size_t size() const { return items.size(); }
};

/// Generators whose Q_cr falls within [Q_cr_min, Q_cr_min + th * Q_T]. Exhausted generators
/// (reserve <= 0) and generators already at a limit are left out.
CriticalGeneratorList select_critical_generators(std::span<const RprModel> models, double q_total,
                                                 double threshold = 0.01);

struct AugmentedJacobian {
    JacobianMatrix jac;
    std::vector<std::size_t> retyped;  // bus positions that gained a magnitude variable
    std::vector<std::string> warnings;
};

/// Adds the magnitude variable and reactive power equation of every listed generator bus.
/// Listed buses that are already PQ are skipped with a warning.
AugmentedJacobian augment_jacobian(const JacobianMatrix& jac, const CriticalGeneratorList& list,
                                   const NetworkModel& model, const AdmittanceMatrix& ybus,
                                   std::span<const Complex> voltages);

struct BusIndices {
    int bus_id = 0;
    VsiStatus status = VsiStatus::NotApplicable;
    double vsi = 0.0;
    double vsi_u = 0.0;
    double wvsi = 0.0;
};

struct StabilityReport {
    double timestamp = 0.0;
    double q_total = 0.0;
    std::vector<BusIndices> buses;  // one per bus position
    double w1 = 1.0;
    double w2 = 0.0;
    CriticalGeneratorList critical;
    std::vector<RprModel> rpr_models;
    std::vector<std::string> warnings;

    /// Bus position with the largest WVSI among evaluated buses.
    std::optional<std::size_t> critical_bus() const;
    double max_wvsi() const;
};

/// Reserve weight w1 = sum RPR / sum Q_max over the list, clamped to [0, 1]. Entries on the lower
/// side contribute Q_g - Q_min against |Q_min|.
/// Empty list gives 1; a zero capacity sum gives 0 and appends a warning.
double reserve_weight(const NetworkModel& model, const EstimatedState& est, const CriticalGeneratorList& list,
                      std::vector<std::string>* warnings = nullptr);

/// Combines the plain and anticipated profiles: WVSI = w1 VSI + w2 VSI_u.
StabilityReport compute_wvsi(const NetworkModel& model, const EstimatedState& est, const VsiProfile& vsi,
                             const CriticalGeneratorList& list, const VsiProfile& vsi_u);

struct AssessmentOptions {
    double threshold = 0.01;
    double alpha_fraction = 0.01;
    RprFitOptions fit;
};

/// Full single-snapshot pipeline on the latest estimate of the window: reserve fits, critical
/// list, VSI, augmented-Jacobian VSI_u and WVSI. With fewer than three distinct Q_T values the
/// list is empty and WVSI = VSI.
StabilityReport assess(const NetworkModel& model, const MeasurementWindow& window, const LoadDirection& dir,
                       const AssessmentOptions& options = {});

/// Same as `assess` with an externally supplied critical list (used after contingency tracking).
StabilityReport assess_with_list(const NetworkModel& model, const EstimatedState& est, const LoadDirection& dir,
                                 const CriticalGeneratorList& list, const AssessmentOptions& options = {});

}  // namespace vsa
