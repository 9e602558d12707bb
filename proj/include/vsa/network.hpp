#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vsa/common.hpp"

namespace vsa {

enum class BusType { PQ = 1, PV = 2, Slack = 3 };

std::string_view to_string(BusType t);

/// Bus data, per-unit on the system base. Shunts are admittances at 1 p.u. voltage.
struct Bus {
    int id = 0;
    BusType type = BusType::PQ;
    double pd = 0.0;
    double qd = 0.0;
    double gs = 0.0;
    double bs = 0.0;
    double vm = 1.0;      // initial / published magnitude
    double va_deg = 0.0;  // initial / published angle
    double base_kv = 0.0;
    double vmax = 1.1;
    double vmin = 0.9;

    bool operator==(const Bus&) const = default;
};

/// Pi-model branch. `ratio` is the off-nominal tap on the from side (1 for lines),
/// `scale` is the remaining fraction of the branch admittance (1 - K for a partial outage).
struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    double b = 0.0;
    double ratio = 1.0;
    double shift_deg = 0.0;
    bool in_service = true;
    double scale = 1.0;

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;
    double pg = 0.0;
    double qg = 0.0;
    double qmax = 0.0;
    double qmin = 0.0;
    double vsetpoint = 1.0;
    double pmax = 0.0;
    double pmin = 0.0;
    bool in_service = true;

    bool operator==(const Generator&) const = default;
};

using BranchId = std::size_t;
using GeneratorId = std::size_t;

/// Immutable grid description. Construct through `NetworkModel::create` (validates)
/// or `load_case`.
class NetworkModel {
  public:
    NetworkModel() = default;

    /// Validates and indexes the tables. Throws ValidationError.
    static NetworkModel create(double base_mva, std::vector<Bus> buses, std::vector<Branch> branches,
                               std::vector<Generator> generators, std::string name = {});

    const std::string& name() const noexcept { return name_; }
    double base_mva() const noexcept { return base_mva_; }
    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    const std::vector<Generator>& generators() const noexcept { return generators_; }

    std::size_t bus_count() const noexcept { return buses_.size(); }

    /// Position of the bus with external id `id`; throws ValidationError if unknown.
    std::size_t bus_index(int id) const;
    bool has_bus(int id) const { return index_.count(id) != 0; }
    std::size_t slack_index() const noexcept { return slack_; }

    /// In-service generators connected to bus position `b`.
    const std::vector<GeneratorId>& generators_at(std::size_t b) const { return gens_at_[b]; }

    /// "from-to" label, with a "#n" suffix for the n-th parallel circuit (n >= 2).
    std::string branch_label(BranchId id) const;

    /// Resolves "5-6", "5-6#2" or a 0-based numeric index into a branch id.
    std::optional<BranchId> find_branch(std::string_view label) const;

    /// Copy of this model with modified tables (re-validated).
    NetworkModel with_buses(std::vector<Bus> buses) const;
    NetworkModel with_branches(std::vector<Branch> branches) const;
    NetworkModel with_generators(std::vector<Generator> generators) const;

    bool operator==(const NetworkModel& o) const {
        return base_mva_ == o.base_mva_ && buses_ == o.buses_ && branches_ == o.branches_ &&
               generators_ == o.generators_;
    }

  private:
    void validate_and_index();

    std::string name_;
    double base_mva_ = 100.0;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::vector<Generator> generators_;
    std::unordered_map<int, std::size_t> index_;
    std::vector<std::vector<GeneratorId>> gens_at_;
    std::size_t slack_ = 0;
};

/// Parses MATPOWER-style `.m` text or the JSON mirror (detected by a leading '{').
/// Throws ParseError or ValidationError.
NetworkModel load_case(std::string_view source, std::string name = {});
NetworkModel load_case_file(const std::string& path);

/// JSON mirror, per-unit, named fields. `load_case(to_json_text(m)) == m`.
std::string to_json_text(const NetworkModel& model);

/// Branch admittance stamps, already scaled by `Branch::scale`.
struct BranchStamp {
    std::size_t from = 0;
    std::size_t to = 0;
    Complex yff, yft, ytf, ytt;
};

struct AdmittanceMatrix {
    Eigen::MatrixXcd y;
    std::vector<BranchStamp> stamps;  // indexed by BranchId; zero for out-of-service branches
};

AdmittanceMatrix build_ybus(const NetworkModel& model);

/// Unscaled stamp of a single branch, even if it is out of service.
BranchStamp branch_stamp(const NetworkModel& model, BranchId id, bool apply_scale = true);

/// Scales the branch admittance (series and charging) by (1 - severity). severity = 1 takes
/// the branch out of service. Throws ValidationError for an unknown or already-open branch.
NetworkModel apply_outage(const NetworkModel& model, BranchId branch, double severity);

/// Bus positions not connected to the slack bus through in-service branches.
std::vector<std::size_t> islanded_buses(const NetworkModel& model);

}  // namespace vsa
