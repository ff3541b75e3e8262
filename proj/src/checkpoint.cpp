#include "casnet/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace casnet {

namespace {
constexpr const char* kMagic = "casnet-checkpoint";
constexpr int kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Param*>& params) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << kMagic << " v" << kVersion << "\n";
    out << "params " << params.size() << "\n";
    char buf[40];
    for (const Param* p : params) {
        const Shape& s = p->value.shape();
        out << p->name << " " << s.n << " " << s.h << " " << s.w << " " << s.c << "\n";
        const auto& d = p->value.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%a", d[i]);
            out << buf << (i + 1 == d.size() ? "" : " ");
        }
        out << "\n";
    }
    if (!out) throw DataError("write failed for checkpoint '" + path + "'");
}

void load_checkpoint(const std::string& path, const std::vector<Param*>& params) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read checkpoint '" + path + "'");
    std::string magic, version;
    in >> magic >> version;
    if (magic != kMagic || version != "v" + std::to_string(kVersion)) {
        throw DataError("'" + path + "' is not a v" + std::to_string(kVersion) + " checkpoint");
    }
    std::string word;
    std::size_t count = 0;
    in >> word >> count;
    if (word != "params" || !in) throw DataError("malformed checkpoint header in '" + path + "'");
    if (count != params.size()) {
        throw DataError("checkpoint '" + path + "' holds " + std::to_string(count) +
                        " params, expected " + std::to_string(params.size()));
    }
    for (Param* p : params) {
        std::string name;
        Shape s;
        in >> name >> s.n >> s.h >> s.w >> s.c;
        if (!in) throw DataError("truncated checkpoint '" + path + "' at '" + p->name + "'");
        if (name != p->name) {
            throw DataError("checkpoint param '" + name + "' does not match expected '" + p->name +
                            "'");
        }
        if (!(s == p->value.shape())) {
            throw DataError("checkpoint param '" + name + "' has shape " + s.str() +
                            ", expected " + p->value.shape().str());
        }
        auto& d = p->value.raw();
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::string tok;
            in >> tok;
            if (!in) throw DataError("truncated checkpoint '" + path + "' in '" + name + "'");
            try {
                d[i] = std::stod(tok);
            } catch (const std::exception&) {
                throw DataError("bad value '" + tok + "' in checkpoint param '" + name + "'");
            }
        }
    }
}

}  // namespace casnet
