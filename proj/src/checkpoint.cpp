#include "mcae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mcae {

namespace fs = std::filesystem;

namespace {

struct IndexEntry {
    Index rows = 0;
    Index cols = 0;
    std::string file;
};

void write_blob(const Mat& m, const fs::path& path) {
    std::vector<unsigned char> bytes(m.size() * 4);
    for (Index i = 0; i < m.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.values()[i]));
        for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<Index>(b)] = static_cast<unsigned char>(bits >> (8 * b));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write tensor file: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void read_blob(Mat& m, const fs::path& path, const std::string& name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("checkpoint: missing tensor file for " + name);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != m.size() * 4) throw RuntimeError("checkpoint: corrupt tensor file for " + name);
    for (Index i = 0; i < m.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<Index>(b)]) << (8 * b);
        m.values()[i] = static_cast<Real>(std::bit_cast<float>(bits));
    }
}

std::map<std::string, IndexEntry> read_index(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeError("checkpoint: missing index file " + path.string());
    std::map<std::string, IndexEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        IndexEntry e;
        if (!(ls >> name >> e.rows >> e.cols >> e.file))
            throw RuntimeError("checkpoint: corrupt index file at line " + std::to_string(lineno));
        out.emplace(name, e);
    }
    return out;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const RunConfig& config, const fs::path& dir, bool include_decoder,
                     bool include_head) {
    fs::create_directories(dir / "tensors");
    save_config(config, dir / "config.txt");
    std::ofstream index(dir / "index.txt");
    if (!index) throw RuntimeError("cannot write checkpoint index in " + dir.string());
    for (const auto& r : params.refs()) {
        if (r.group == ParamGroup::decoder && !include_decoder) continue;
        if (r.group == ParamGroup::head && !include_head) continue;
        const std::string file = "tensors/" + r.name + ".bin";
        write_blob(*r.tensor, dir / file);
        index << r.name << ' ' << r.tensor->rows() << ' ' << r.tensor->cols() << ' ' << file << '\n';
    }
}

Checkpoint load_checkpoint(const fs::path& dir, LoadScope scope) {
    if (!fs::is_directory(dir)) throw RuntimeError("checkpoint directory not found: " + dir.string());
    Checkpoint ck;
    ck.config = load_config(dir / "config.txt");
    validate(ck.config.encoder);
    validate(ck.config.decoder);
    ck.params = init_params(ck.config.encoder, ck.config.decoder, ck.config.schedule.seed);
    auto index = read_index(dir / "index.txt");

    ck.has_decoder = true;
    ck.has_head = true;
    for (auto& r : ck.params.refs()) {
        const auto it = index.find(r.name);
        if (it == index.end()) {
            if (scope == LoadScope::encoder_only && r.group != ParamGroup::encoder) {
                (r.group == ParamGroup::decoder ? ck.has_decoder : ck.has_head) = false;
                continue;
            }
            throw RuntimeError("checkpoint: missing tensor " + r.name);
        }
        const IndexEntry& e = it->second;
        if (e.rows != r.tensor->rows() || e.cols != r.tensor->cols())
            throw RuntimeError("checkpoint: shape mismatch for " + r.name + ": config manifest implies " +
                               std::to_string(r.tensor->rows()) + "x" + std::to_string(r.tensor->cols()) +
                               ", archive has " + std::to_string(e.rows) + "x" + std::to_string(e.cols));
        read_blob(*r.tensor, dir / e.file, r.name);
        index.erase(it);
    }
    if (!index.empty()) throw RuntimeError("checkpoint: unexpected tensor " + index.begin()->first);
    return ck;
}

}  // namespace mcae
