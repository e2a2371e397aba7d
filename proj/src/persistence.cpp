#include "cure/persistence.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cure/error.hpp"

namespace cure {
namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kFixedColumns = {"epoch",  "phase",      "nat_train_acc", "nat_test_acc",
                                                "adv_test_acc", "train_loss", "ce_nat",   "kl_nat_adv",
                                                "l_cr",   "revision_events"};

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double cell_double(const std::string& cell, std::size_t row)
{
    double v = 0.0;
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw IoError("run log row " + std::to_string(row) + ": bad number '" + cell + "'");
    }
    return v;
}

} // namespace

std::string fmt_acc(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

std::string fmt_real(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

std::string runlog_csv(const RunLog& log)
{
    std::string out;
    for (const auto& c : kFixedColumns) {
        out += (out.empty() ? "" : ",") + c;
    }
    for (const auto& n : log.tensor_names) out += ",grad:" + n;
    for (const auto& n : log.tensor_names) out += ",updated:" + n;
    out += '\n';
    for (const auto& r : log.records) {
        if (r.mean_abs_grad.size() != log.tensor_names.size() || r.fraction_updated.size() != log.tensor_names.size()) {
            throw ShapeError("run log record has the wrong number of per-tensor statistics");
        }
        out += std::to_string(r.epoch) + ',' + r.phase + ',' + fmt_acc(r.nat_train_acc) + ',' + fmt_acc(r.nat_test_acc) +
               ',' + fmt_acc(r.adv_test_acc) + ',' + fmt_real(r.train_loss) + ',' + fmt_real(r.ce_nat) + ',' +
               fmt_real(r.kl_nat_adv) + ',' + fmt_real(r.l_cr) + ',' + std::to_string(r.revision_events);
        for (const double g : r.mean_abs_grad) out += ',' + fmt_real(g);
        for (const double f : r.fraction_updated) out += ',' + fmt_real(f);
        out += '\n';
    }
    return out;
}

void write_runlog_csv(const fs::path& path, const RunLog& log)
{
    write_text(path, runlog_csv(log));
}

RunLog read_runlog_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read run log " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError("run log " + path.string() + " is empty");
    }
    const auto header = split_csv_line(line);
    if (header.size() < kFixedColumns.size() ||
        !std::equal(kFixedColumns.begin(), kFixedColumns.end(), header.begin())) {
        throw IoError("run log " + path.string() + " does not match schema version " +
                      std::to_string(kRunLogSchemaVersion));
    }
    const std::size_t extra = header.size() - kFixedColumns.size();
    if (extra % 2 != 0) {
        throw IoError("run log header has unpaired per-tensor columns");
    }
    RunLog log;
    log.tag = path.stem().string();
    const std::size_t nt = extra / 2;
    for (std::size_t i = 0; i < nt; ++i) {
        const auto& g = header[kFixedColumns.size() + i];
        if (g.rfind("grad:", 0) != 0) {
            throw IoError("run log header: expected grad:<tensor>, got '" + g + "'");
        }
        log.tensor_names.push_back(g.substr(5));
    }
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw IoError("run log row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                          " fields, got " + std::to_string(cells.size()));
        }
        TrainRecord r;
        r.epoch = static_cast<std::size_t>(cell_double(cells[0], row));
        r.phase = cells[1];
        r.nat_train_acc = cell_double(cells[2], row);
        r.nat_test_acc = cell_double(cells[3], row);
        r.adv_test_acc = cell_double(cells[4], row);
        r.train_loss = cell_double(cells[5], row);
        r.ce_nat = cell_double(cells[6], row);
        r.kl_nat_adv = cell_double(cells[7], row);
        r.l_cr = cell_double(cells[8], row);
        r.revision_events = static_cast<std::size_t>(cell_double(cells[9], row));
        for (std::size_t i = 0; i < nt; ++i) {
            r.mean_abs_grad.push_back(cell_double(cells[kFixedColumns.size() + i], row));
            r.fraction_updated.push_back(cell_double(cells[kFixedColumns.size() + nt + i], row));
        }
        log.records.push_back(std::move(r));
    }
    return log;
}

void write_table_csv(const fs::path& path, const Table& table)
{
    std::string out;
    for (const auto& row : table) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out += (i ? "," : "") + row[i];
        }
        out += '\n';
    }
    write_text(path, out);
}

void write_summary_json(const fs::path& path, const std::vector<std::pair<std::string, double>>& metrics)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metrics) {
        j[k] = v;
    }
    write_text(path, j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string sha256_file(const fs::path& path)
{
    return sha256_hex(read_text(path));
}

void write_manifest(const fs::path& dir, std::vector<std::string> files)
{
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& f : files) {
        arr.push_back({{"path", f}, {"size", fs::file_size(dir / f)}, {"sha256", sha256_file(dir / f)}});
    }
    nlohmann::ordered_json j;
    j["files"] = arr;
    write_text(dir / kManifestName, j.dump(2) + "\n");
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir)
{
    const auto text = read_text(dir / kManifestName);
    std::vector<ManifestEntry> out;
    try {
        const auto j = nlohmann::json::parse(text);
        for (const auto& e : j.at("files")) {
            out.push_back({e.at("path").get<std::string>(), e.at("size").get<std::uintmax_t>(),
                           e.at("sha256").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    return out;
}

std::vector<std::string> verify_manifest(const fs::path& dir)
{
    std::vector<std::string> bad;
    for (const auto& e : read_manifest(dir)) {
        const auto p = dir / e.path;
        if (!fs::is_regular_file(p) || fs::file_size(p) != e.size || sha256_file(p) != e.sha256) {
            bad.push_back(e.path);
        }
    }
    return bad;
}

} // namespace cure
