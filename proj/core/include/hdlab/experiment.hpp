#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "hdlab/tensor.hpp"

namespace hdlab {

inline constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

// One metrics row. Unset numeric fields serialize as empty CSV cells.
struct MetricRow {
    std::string stage;
    long iteration = 0;
    double loss = kUnset;
    double loss_dmd = kUnset;
    double loss_adv_g = kUnset;
    double loss_adv_d = kUnset;
    double circle_distance = kUnset;
    double disc_real = kUnset;
    double disc_fake = kUnset;
    double awd_entropy = kUnset;
    long clamped = -1;
};

// Per-run metrics with provenance. Rows keep a monotone iteration index per
// stage; every row is tagged with the run's seed and config hash on export.
class ExperimentRecord {
public:
    std::string run_id;
    std::uint64_t seed = 0;
    std::string config_hash;

    void add_row(MetricRow row);
    const std::vector<MetricRow>& rows() const { return rows_; }

    std::map<std::string, double>& summary() { return summary_; }
    const std::map<std::string, double>& summary() const { return summary_; }

    static const std::string& csv_header();
    std::string to_csv() const;
    void write_csv(const std::string& path) const;

    std::string summary_json() const;
    void write_summary(const std::string& path) const;
    static std::map<std::string, double> read_summary(const std::string& path);

private:
    std::vector<MetricRow> rows_;
    std::map<std::string, double> summary_;
};

// Scatter snapshot of generated points: columns run,stage,x,y,d.
void write_scatter_csv(const std::string& run, const std::string& stage, const Tensor& points,
                       const std::string& path);

}  // namespace hdlab
