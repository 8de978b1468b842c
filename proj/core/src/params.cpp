#include "scdlab/params.hpp"

#include "scdlab/error.hpp"

#include <algorithm>

namespace scdlab {

Matrix& ParameterSet::add(std::string name, Matrix value, bool frozen) {
    if (contains(name)) {
        throw ValidationError("duplicate tensor name '" + name + "'");
    }
    entries_.push_back(Entry{std::move(name), std::move(value), frozen});
    return entries_.back().value;
}

bool ParameterSet::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

ParameterSet::Entry& ParameterSet::entry(std::string_view name) {
    for (auto& e : entries_) {
        if (e.name == name) return e;
    }
    throw ValidationError("no tensor named '" + std::string(name) + "'");
}

const ParameterSet::Entry& ParameterSet::entry(std::string_view name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e;
    }
    throw ValidationError("no tensor named '" + std::string(name) + "'");
}

Matrix& ParameterSet::at(std::string_view name) {
    return entry(name).value;
}

const Matrix& ParameterSet::at(std::string_view name) const {
    return entry(name).value;
}

std::size_t ParameterSet::num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    out.entries_.reserve(entries_.size());
    for (const auto& e : entries_) {
        out.entries_.push_back(Entry{e.name, Matrix::Zero(e.value.rows(), e.value.cols()), false});
    }
    return out;
}

void ParameterSet::set_zero() {
    for (auto& e : entries_) e.value.setZero();
}

void ParameterSet::add_scaled(const ParameterSet& other, double scale) {
    if (other.entries_.size() != entries_.size()) {
        throw ValidationError("add_scaled: parameter sets differ in size");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        entries_[i].value += scale * other.entries_[i].value;
    }
}

double ParameterSet::squared_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) s += e.value.squaredNorm();
    return s;
}

bool ParameterSet::all_finite() const {
    return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.value.allFinite(); });
}

void ParameterSet::erase_prefix(std::string_view prefix) {
    std::erase_if(entries_, [&](const Entry& e) { return e.name.starts_with(prefix); });
}

void round_to_float(Matrix& m) {
    m = m.cast<float>().cast<double>();
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    Json tensors = Json::array();
    for (const auto& e : ckpt.params.entries()) {
        tensors.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}, {"frozen", e.frozen}});
    }
    const std::string header = Json{{"tensors", tensors}, {"meta", ckpt.meta}}.dump();
    std::string out = "SCDT";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (const auto& e : ckpt.params.entries()) {
        if (!e.value.allFinite()) {
            throw RuntimeFailure("refusing to save non-finite tensor '" + e.name + "'");
        }
        for (Eigen::Index i = 0; i < e.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < e.value.cols(); ++j) {
                put_f32(out, static_cast<float>(e.value(i, j)));
            }
        }
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 12 || bytes.substr(0, 4) != "SCDT") {
        throw ValidationError("not an SCDT checkpoint");
    }
    if (get_u32(bytes, 4) != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version");
    }
    const std::size_t header_len = get_u32(bytes, 8);
    if (12 + header_len > bytes.size()) {
        throw ValidationError("truncated checkpoint header");
    }
    Json header;
    try {
        header = Json::parse(bytes.substr(12, header_len));
    } catch (const Json::parse_error& e) {
        throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
    }
    Checkpoint ckpt;
    ckpt.meta = header.value("meta", Json::object());
    std::size_t off = 12 + header_len;
    for (const auto& t : header.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j, off += 4) {
                m(i, j) = get_f32(bytes, off);
            }
        }
        ckpt.params.add(t.at("name").get<std::string>(), std::move(m), t.value("frozen", false));
    }
    if (off != bytes.size()) {
        throw ValidationError("checkpoint payload size mismatch");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

} // namespace scdlab
