#pragma once

#include "scdlab/io.hpp"
#include "scdlab/linalg.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace scdlab {

// Ordered collection of named 2-D tensors. Insertion order is the canonical
// order for checkpoints and gradient reduction.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Matrix value;
        bool frozen = false; // stored flag; frozen tensors are never optimized
    };

    Matrix& add(std::string name, Matrix value, bool frozen = false);

    bool contains(std::string_view name) const;
    Matrix& at(std::string_view name);
    const Matrix& at(std::string_view name) const;
    Entry& entry(std::string_view name);
    const Entry& entry(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t num_scalars() const;

    // Same names and shapes, all zeros, no frozen flags.
    ParameterSet zeros_like() const;
    void set_zero();
    void add_scaled(const ParameterSet& other, double scale);
    double squared_norm() const;
    bool all_finite() const;

    // Removes every tensor whose name starts with `prefix`.
    void erase_prefix(std::string_view prefix);

private:
    std::vector<Entry> entries_;
};

// Named-tensor container on disk:
//   "SCDT", u32 version, u32 header length, header JSON, then each tensor as
//   rows*cols little-endian float32 values (row-major) in header order.
// The header holds {"tensors": [{name, rows, cols, frozen}], "meta": {...}}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ParameterSet params;
    Json meta = Json::object();
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every value through float32, matching what a save/load cycle yields.
void round_to_float(Matrix& m);

} // namespace scdlab
