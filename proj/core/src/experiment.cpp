#include "hdlab/experiment.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hdlab/io.hpp"
#include "hdlab/metrics.hpp"

namespace hdlab {

namespace {

std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

}  // namespace

void ExperimentRecord::add_row(MetricRow row) {
    if (!rows_.empty() && rows_.back().stage == row.stage &&
        row.iteration < rows_.back().iteration) {
        throw std::invalid_argument("ExperimentRecord: iteration index must be monotone");
    }
    rows_.push_back(std::move(row));
}

const std::string& ExperimentRecord::csv_header() {
    static const std::string kHeader =
        "run,seed,config_hash,stage,iteration,loss,loss_dmd,loss_adv_g,loss_adv_d,"
        "circle_distance,disc_real,disc_fake,awd_entropy,clamped";
    return kHeader;
}

std::string ExperimentRecord::to_csv() const {
    std::string out = csv_header() + "\n";
    for (const MetricRow& r : rows_) {
        out += run_id + "," + std::to_string(seed) + "," + config_hash + "," + r.stage + "," +
               std::to_string(r.iteration) + "," + cell(r.loss) + "," + cell(r.loss_dmd) + "," +
               cell(r.loss_adv_g) + "," + cell(r.loss_adv_d) + "," + cell(r.circle_distance) +
               "," + cell(r.disc_real) + "," + cell(r.disc_fake) + "," + cell(r.awd_entropy) +
               "," + (r.clamped < 0 ? std::string() : std::to_string(r.clamped)) + "\n";
    }
    return out;
}

void ExperimentRecord::write_csv(const std::string& path) const {
    write_text_file(path, to_csv());
}

std::string ExperimentRecord::summary_json() const {
    nlohmann::ordered_json j;
    j["run"] = run_id;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    nlohmann::ordered_json vals;
    for (const auto& [k, v] : summary_) vals[k] = v;
    j["summary"] = std::move(vals);
    return j.dump(2) + "\n";
}

void ExperimentRecord::write_summary(const std::string& path) const {
    write_text_file(path, summary_json());
}

std::map<std::string, double> ExperimentRecord::read_summary(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("cannot parse summary '" + path + "': " + e.what());
    }
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.at("summary").items()) out[k] = v.get<double>();
    return out;
}

void write_scatter_csv(const std::string& run, const std::string& stage, const Tensor& points,
                       const std::string& path) {
    const std::vector<double> d = circle_distances(points);
    std::string csv = "run,stage,x,y,d\n";
    for (std::size_t i = 0; i < points.rows(); ++i) {
        csv += run + "," + stage + "," + format_double(points(i, 0)) + "," +
               format_double(points(i, 1)) + "," + format_double(d[i]) + "\n";
    }
    write_text_file(path, csv);
}

}  // namespace hdlab
