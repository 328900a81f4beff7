#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sparsedyn/tensor.hpp"
#include "sparsedyn/training.hpp"

namespace sparsedyn::io {

// Portable tensor binary "DTB1": magic 'D','T','B','1', u8 dtype (1 = f64),
// u8 ndim, ndim x u64 little-endian dims, row-major f64 little-endian
// payload.
void write_dtb1(const std::string& path, const Tensor& t);
Tensor read_dtb1(const std::string& path);

// Named-tensor container "SDCK": magic, u32 entry count, then per entry
// u32 name length, UTF-8 name, inline DTB1 tensor. Entries are written
// sorted by name, so save(load(f)) is byte-identical.
void write_container(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>> entries);
std::vector<std::pair<std::string, Tensor>> read_container(const std::string& path);

// Plain-text `key = value` config files. '#' starts a comment line.
struct ConfigFile {
    std::map<std::string, std::string> values;
    std::map<std::string, std::size_t> line_of;

    static ConfigFile parse(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;

    // Throws naming every unexpected key with its line number.
    void restrict_keys(const std::vector<std::string>& allowed) const;
    // Throws naming the first missing key.
    void require(const std::vector<std::string>& keys) const;
};

void save_checkpoint(const std::string& path, const train::Checkpoint& ckpt);
train::Checkpoint load_checkpoint(const std::string& path);

struct ManifestEntry {
    std::string condition;
    std::string series_id;
    std::size_t t_len = 0, h = 0, w = 0;
    std::string rel_path;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Loads every series listed in <data_dir>/manifest.
std::vector<train::SeriesData> load_dataset(const std::string& data_dir);

} // namespace sparsedyn::io
