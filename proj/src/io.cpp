#include "sparsedyn/io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sparsedyn/error.hpp"

namespace sparsedyn::io {

namespace {

constexpr char kTensorMagic[4] = {'D', 'T', 'B', '1'};
constexpr char kContainerMagic[4] = {'S', 'D', 'C', 'K'};

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw FormatError("dtb1: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw FormatError("container: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

void write_tensor_stream(std::ostream& out, const Tensor& t) {
    out.write(kTensorMagic, 4);
    out.put(static_cast<char>(1)); // dtype f64
    out.put(static_cast<char>(t.ndim()));
    for (std::size_t d : t.shape()) write_u64(out, d);
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * 8));
}

Tensor read_tensor_stream(std::istream& in, const std::string& what) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) {
        throw FormatError(what + ": bad DTB1 magic");
    }
    const int dtype = in.get();
    if (dtype != 1) throw FormatError(what + ": unsupported dtype " + std::to_string(dtype));
    const int ndim = in.get();
    if (ndim < 0 || ndim > 8) throw FormatError(what + ": implausible ndim");
    std::vector<std::size_t> shape;
    for (int i = 0; i < ndim; ++i) shape.push_back(static_cast<std::size_t>(read_u64(in)));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.mutable_data().data()),
            static_cast<std::streamsize>(t.numel() * 8));
    if (!in) throw FormatError(what + ": truncated payload");
    return t;
}

Tensor string_tensor(const std::string& s) {
    Tensor t({s.size()});
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<double>(
        static_cast<unsigned char>(s[i]));
    return t;
}

std::string tensor_string(const Tensor& t) {
    std::string s;
    for (double v : t.data()) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return s;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

} // namespace

void write_dtb1(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("dtb1: cannot open " + path + " for writing");
    write_tensor_stream(out, t);
    if (!out) throw FormatError("dtb1: write failed for " + path);
}

Tensor read_dtb1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("dtb1: cannot open " + path);
    return read_tensor_stream(in, path);
}

void write_container(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].first == entries[i - 1].first) {
            throw FormatError("container: duplicate entry name '" + entries[i].first + "'");
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("container: cannot open " + path + " for writing");
    out.write(kContainerMagic, 4);
    write_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_stream(out, tensor);
    }
    if (!out) throw FormatError("container: write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("container: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kContainerMagic, 4) != 0) {
        throw FormatError(path + ": bad container magic");
    }
    const std::uint32_t count = read_u32(in);
    std::vector<std::pair<std::string, Tensor>> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = read_u32(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw FormatError(path + ": truncated entry name");
        Tensor t = read_tensor_stream(in, path + ":" + name);
        entries.emplace_back(std::move(name), std::move(t));
    }
    return entries;
}

ConfigFile ConfigFile::parse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    ConfigFile cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " is not 'key = value': '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " has an empty key or value");
        }
        if (cfg.values.count(key)) {
            throw ConfigError("config: duplicate key '" + key + "' at line " +
                              std::to_string(line_no));
        }
        cfg.values[key] = value;
        cfg.line_of[key] = line_no;
    }
    return cfg;
}

const std::string& ConfigFile::get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
}

double ConfigFile::get_double(const std::string& key) const {
    const std::string& s = get(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw ConfigError("config: key '" + key + "' (line " +
                          std::to_string(line_of.at(key)) + ") is not a number: '" + s + "'");
    }
    return v;
}

std::size_t ConfigFile::get_size(const std::string& key) const {
    const double v = get_double(key);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw ConfigError("config: key '" + key + "' must be a nonnegative integer");
    }
    return static_cast<std::size_t>(v);
}

std::uint64_t ConfigFile::get_u64(const std::string& key) const {
    const std::string& s = get(key);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') {
        throw ConfigError("config: key '" + key + "' (line " +
                          std::to_string(line_of.at(key)) + ") is not an integer: '" + s + "'");
    }
    return static_cast<std::uint64_t>(v);
}

void ConfigFile::restrict_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [key, value] : values) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("config: unknown key '" + key + "' at line " +
                              std::to_string(line_of.at(key)));
        }
    }
}

void ConfigFile::require(const std::vector<std::string>& keys) const {
    for (const auto& key : keys) {
        if (!values.count(key)) throw ConfigError("config: missing key '" + key + "'");
    }
}

void save_checkpoint(const std::string& path, const train::Checkpoint& ckpt) {
    std::vector<std::pair<std::string, Tensor>> entries;
    const auto& cfg = ckpt.config;
    entries.emplace_back(
        "config.flags",
        Tensor({11}, {static_cast<double>(static_cast<int>(cfg.regime)), cfg.lambda,
                      static_cast<double>(cfg.p), static_cast<double>(cfg.window), cfg.lr,
                      static_cast<double>(cfg.epochs),
                      static_cast<double>(cfg.seed >> 32),
                      static_cast<double>(cfg.seed & 0xffffffffULL),
                      static_cast<double>(cfg.channel_width), cfg.eps_gamma,
                      cfg.use_skip ? 1.0 : 0.0}));
    {
        Tensor hist({ckpt.history.size(), 2});
        auto hd = hist.mutable_data();
        for (std::size_t e = 0; e < ckpt.history.size(); ++e) {
            hd[e * 2] = ckpt.history[e].l_rec;
            hd[e * 2 + 1] = ckpt.history[e].r_var;
        }
        entries.emplace_back("history", std::move(hist));
    }
    entries.emplace_back("mean.xbar", ckpt.mean.xbar);
    entries.emplace_back("mean.floor", Tensor::scalar(ckpt.mean.floor));
    entries.emplace_back("model.meta",
                         Tensor({3}, {static_cast<double>(ckpt.model.channels),
                                      ckpt.model.skip ? 1.0 : 0.0, ckpt.model.leaky_slope}));
    for (const auto& [name, t] : ckpt.model.named_params())
        entries.emplace_back("model." + name, *t);
    for (std::size_t i = 0; i < ckpt.coeffs.size(); ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "series.%05zu.", i);
        const std::string prefix = buf;
        entries.emplace_back(prefix + "a", ckpt.coeffs[i].dense());
        entries.emplace_back(prefix + "sigma", Tensor::scalar(ckpt.coeffs[i].sigma_z));
        entries.emplace_back(prefix + "id", string_tensor(ckpt.series_ids[i]));
        entries.emplace_back(prefix + "cond", string_tensor(ckpt.series_conditions[i]));
    }
    write_container(path, std::move(entries));
}

train::Checkpoint load_checkpoint(const std::string& path) {
    auto entries = read_container(path);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : entries) by_name.emplace(name, std::move(t));
    auto need = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError(path + ": checkpoint misses entry '" + name + "'");
        }
        return it->second;
    };

    train::Checkpoint ckpt;
    {
        const Tensor& f = need("config.flags");
        if (f.numel() != 11) throw FormatError(path + ": unexpected config version");
        ckpt.config.regime = static_cast<train::Regime>(static_cast<int>(f.at(0)));
        ckpt.config.lambda = f.at(1);
        ckpt.config.p = static_cast<std::size_t>(f.at(2));
        ckpt.config.window = static_cast<std::size_t>(f.at(3));
        ckpt.config.lr = f.at(4);
        ckpt.config.epochs = static_cast<std::size_t>(f.at(5));
        ckpt.config.seed = (static_cast<std::uint64_t>(f.at(6)) << 32) |
                           static_cast<std::uint64_t>(f.at(7));
        ckpt.config.channel_width = static_cast<std::size_t>(f.at(8));
        ckpt.config.eps_gamma = f.at(9);
        ckpt.config.use_skip = f.at(10) != 0.0;
    }
    {
        const Tensor& h = need("history");
        for (std::size_t e = 0; e < h.dim(0); ++e)
            ckpt.history.push_back({h.at(e * 2), h.at(e * 2 + 1)});
    }
    ckpt.mean.xbar = need("mean.xbar");
    ckpt.mean.floor = need("mean.floor").value();
    {
        const Tensor& meta = need("model.meta");
        ckpt.model = ae::ModelParams::init(static_cast<std::size_t>(meta.at(0)),
                                           meta.at(1) != 0.0, 0);
        ckpt.model.leaky_slope = meta.at(2);
        for (auto& [name, t] : ckpt.model.named_params()) {
            const Tensor& stored = need("model." + name);
            if (stored.shape() != t->shape()) {
                throw FormatError(path + ": parameter '" + name + "' has shape " +
                                  stored.shape_str() + ", expected " + t->shape_str());
            }
            *t = stored;
        }
    }
    for (std::size_t i = 0;; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "series.%05zu.", i);
        const std::string prefix = buf;
        if (!by_name.count(prefix + "a")) break;
        const double sigma = need(prefix + "sigma").value();
        const std::string id = tensor_string(need(prefix + "id"));
        ckpt.coeffs.push_back(var::VarCoefficients::from_dense(need(prefix + "a"), sigma, id));
        ckpt.series_ids.push_back(id);
        ckpt.series_conditions.push_back(tensor_string(need(prefix + "cond")));
    }
    return ckpt;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw FormatError("manifest: cannot open " + path + " for writing");
    out << "condition,series_id,t_len,h,w,path\n";
    for (const auto& e : entries) {
        out << e.condition << ',' << e.series_id << ',' << e.t_len << ',' << e.h << ',' << e.w
            << ',' << e.rel_path << '\n';
    }
    if (!out) throw FormatError("manifest: write failed for " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("manifest: cannot open " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        if (first) {
            first = false;
            continue; // header
        }
        std::istringstream row(stripped);
        ManifestEntry e;
        std::string field;
        auto next = [&](const char* what) {
            if (!std::getline(row, field, ',')) {
                throw FormatError("manifest: missing field '" + std::string(what) + "' in: " +
                                  stripped);
            }
            return field;
        };
        e.condition = next("condition");
        e.series_id = next("series_id");
        e.t_len = static_cast<std::size_t>(std::stoull(next("t_len")));
        e.h = static_cast<std::size_t>(std::stoull(next("h")));
        e.w = static_cast<std::size_t>(std::stoull(next("w")));
        e.rel_path = next("path");
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<train::SeriesData> load_dataset(const std::string& data_dir) {
    const auto entries = read_manifest(data_dir + "/manifest");
    if (entries.empty()) throw FormatError("manifest: no series listed in " + data_dir);
    std::vector<train::SeriesData> out;
    for (const auto& e : entries) {
        train::SeriesData s;
        s.id = e.series_id;
        s.condition = e.condition;
        s.frames = read_dtb1(data_dir + "/" + e.rel_path);
        if (s.frames.ndim() != 3 || s.frames.dim(0) != e.t_len || s.frames.dim(1) != e.h ||
            s.frames.dim(2) != e.w) {
            throw FormatError("dataset: " + e.rel_path + " has shape " + s.frames.shape_str() +
                              ", manifest says [" + std::to_string(e.t_len) + "," +
                              std::to_string(e.h) + "," + std::to_string(e.w) + "]");
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace sparsedyn::io
