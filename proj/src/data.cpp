#include "casnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "casnet/pnm.hpp"

namespace casnet {

namespace {

constexpr double kBaseGray = 0.45;
constexpr double kBrightShift = 0.12;
constexpr double kGlobalAmp = 0.025;
constexpr double kPatchUp = 0.03;
constexpr double kPatchDown = 0.015;
// The second global attribute doubles as a contrast state: while it is on,
// every local patch is drawn at reduced amplitude. Patch evidence alone
// cannot tell a weak patch from a patch under low contrast, so decoding the
// locals well requires picking up the global state as well.
constexpr double kContrastLow = 0.5;

int count_kind(const std::vector<AttributeSpec>& attrs, AttrKind kind) {
    return static_cast<int>(std::count_if(attrs.begin(), attrs.end(),
                                          [&](const AttributeSpec& a) { return a.kind == kind; }));
}

void validate_specs(const std::vector<AttributeSpec>& attrs) {
    if (count_kind(attrs, AttrKind::Global) < 2 || count_kind(attrs, AttrKind::Local) < 2)
        throw ConfigError("generate_synthetic: need at least 2 global and 2 local attributes");
    for (const AttributeSpec& a : attrs) {
        if (!(a.base_rate > 0.05 && a.base_rate < 0.95))
            throw ConfigError("attribute " + a.name + ": base_rate " +
                              std::to_string(a.base_rate) + " outside (0.05, 0.95)");
        if (a.kind == AttrKind::Local) {
            const Region& r = a.region;
            if (r.h <= 0.0 || r.w <= 0.0 || r.row < 0.0 || r.col < 0.0 ||
                r.row + r.h > 1.0 + 1e-12 || r.col + r.w > 1.0 + 1e-12)
                throw ConfigError("attribute " + a.name + ": region outside image bounds");
        }
    }
    // Two patches sharing most of their area would make their labels visually
    // indistinguishable, so reject overlap beyond half of the smaller region.
    for (size_t i = 0; i < attrs.size(); ++i) {
        if (attrs[i].kind != AttrKind::Local) continue;
        for (size_t j = i + 1; j < attrs.size(); ++j) {
            if (attrs[j].kind != AttrKind::Local) continue;
            const Region& a = attrs[i].region;
            const Region& b = attrs[j].region;
            const double ih = std::min(a.row + a.h, b.row + b.h) - std::max(a.row, b.row);
            const double iw = std::min(a.col + a.w, b.col + b.w) - std::max(a.col, b.col);
            if (ih <= 0.0 || iw <= 0.0) continue;
            const double smaller = std::min(a.h * a.w, b.h * b.w);
            if (ih * iw > 0.5 * smaller)
                throw ConfigError("attributes " + attrs[i].name + " and " + attrs[j].name +
                                  ": local regions overlap by more than 50%");
        }
    }
}

struct PairLink {
    int global_value_slot;  // index into the labels vector
    double d;               // covariance term rho * sqrt(p(1-p)q(1-q))
    double p;               // global base rate
};

}  // namespace

std::vector<AttributeSpec> default_attribute_specs() {
    std::vector<AttributeSpec> attrs;
    auto rate = [](int idx) { return 0.15 + 0.6 * idx / 25.0; };
    const char* hue_names[3] = {"hue_r", "hue_g", "hue_b"};
    for (int g = 0; g < 10; ++g) {
        AttributeSpec a;
        if (g == 0) a.name = "bright";
        else if (g == 1) a.name = "grad_v";
        else if (g < 5) a.name = hue_names[g - 2];
        else a.name = "wave" + std::to_string(g - 3);
        a.kind = AttrKind::Global;
        // grad_v carries the contrast state, so it sits near even odds to
        // keep both contrast regimes well represented.
        a.base_rate = g == 1 ? 0.5 : rate(g);
        attrs.push_back(std::move(a));
    }
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            AttributeSpec a;
            a.name = "patch_r" + std::to_string(i) + "c" + std::to_string(j);
            a.kind = AttrKind::Local;
            a.region = Region{i / 4.0, j / 4.0, 0.25, 0.25};
            a.base_rate = rate(10 + i * 4 + j);
            attrs.push_back(std::move(a));
        }
    }
    return attrs;
}

std::vector<std::pair<int, int>> correlated_pairs(const std::vector<AttributeSpec>& attrs) {
    std::vector<int> globals, locals;
    for (int i = 0; i < static_cast<int>(attrs.size()); ++i)
        (attrs[i].kind == AttrKind::Global ? globals : locals).push_back(i);
    std::vector<std::pair<int, int>> pairs;
    const size_t k = std::min(globals.size(), locals.size());
    for (size_t i = 0; i < k; ++i) pairs.emplace_back(globals[i], locals[i]);
    return pairs;
}

std::vector<std::uint8_t> sample_labels(const std::vector<AttributeSpec>& attrs,
                                        const std::vector<std::pair<int, int>>& pairs,
                                        double correlation, Rng& rng) {
    const int L = static_cast<int>(attrs.size());
    std::vector<PairLink> link(static_cast<size_t>(L), PairLink{-1, 0.0, 0.0});
    for (const auto& [g, l] : pairs) {
        if (g < 0 || g >= L || l < 0 || l >= L || attrs[g].kind != AttrKind::Global ||
            attrs[l].kind != AttrKind::Local)
            throw ConfigError("sample_labels: invalid correlation pair");
        const double p = attrs[g].base_rate;
        const double q = attrs[l].base_rate;
        const double d = correlation * std::sqrt(p * (1.0 - p) * q * (1.0 - q));
        // Conditional draws must stay valid probabilities for this (p, q, rho).
        if (q + d / p > 1.0 || q - d / (1.0 - p) < 0.0)
            throw ConfigError("sample_labels: correlation " + std::to_string(correlation) +
                              " infeasible for pair (" + attrs[g].name + ", " + attrs[l].name +
                              ")");
        link[static_cast<size_t>(l)] = PairLink{g, d, p};
    }
    std::vector<std::uint8_t> labels(static_cast<size_t>(L), 0);
    // Globals first so a paired local can condition on its partner's value.
    for (int i = 0; i < L; ++i)
        if (attrs[i].kind == AttrKind::Global)
            labels[static_cast<size_t>(i)] = rng.bernoulli(attrs[i].base_rate) ? 1 : 0;
    for (int i = 0; i < L; ++i) {
        if (attrs[i].kind != AttrKind::Local) continue;
        const PairLink& pl = link[static_cast<size_t>(i)];
        double q = attrs[i].base_rate;
        if (pl.global_value_slot >= 0) {
            q += labels[static_cast<size_t>(pl.global_value_slot)] ? pl.d / pl.p
                                                                   : -pl.d / (1.0 - pl.p);
        }
        labels[static_cast<size_t>(i)] = rng.bernoulli(q) ? 1 : 0;
    }
    return labels;
}

Tensor render_image(const std::vector<AttributeSpec>& attrs,
                    const std::vector<std::uint8_t>& labels, double noise, int height,
                    int width, Rng& rng) {
    if (labels.size() != attrs.size())
        throw ShapeError("render_image: label count does not match attribute count");
    if (height <= 0 || width <= 0) throw ConfigError("render_image: non-positive image size");
    Tensor img = Tensor::full(Shape{1, height, width, 3}, kBaseGray);
    auto& buf = img.raw();
    double patch_scale = 1.0;
    {
        int g = 0;
        for (size_t i = 0; i < attrs.size(); ++i) {
            if (attrs[i].kind != AttrKind::Global) continue;
            if (g++ == 1) {
                if (labels[i]) patch_scale = kContrastLow;
                break;
            }
        }
    }
    int global_ord = 0, local_ord = 0;
    for (size_t i = 0; i < attrs.size(); ++i) {
        const AttributeSpec& a = attrs[i];
        const int ord = a.kind == AttrKind::Global ? global_ord++ : local_ord++;
        if (!labels[i]) continue;
        if (a.kind == AttrKind::Global) {
            for (int y = 0; y < height; ++y) {
                const double rf = (y + 0.5) / height;
                for (int x = 0; x < width; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        double& v = buf[static_cast<size_t>(img.offset(0, y, x, c))];
                        if (ord == 0) v += kBrightShift;
                        else if (ord == 1) v += kGlobalAmp * (2.0 * rf - 1.0);
                        else if (ord < 5)
                            v += (c == ord - 2) ? kGlobalAmp : -0.5 * kGlobalAmp;
                        else if (c == ord % 3)
                            v += kGlobalAmp * std::cos(3.14159265358979323846 * (ord - 3) * rf);
                    }
                }
            }
        } else {
            const Region& r = a.region;
            const int y0 = static_cast<int>(std::floor(r.row * height + 1e-9));
            const int y1 = std::min(height, static_cast<int>(std::floor((r.row + r.h) * height + 1e-9)));
            const int x0 = static_cast<int>(std::floor(r.col * width + 1e-9));
            const int x1 = std::min(width, static_cast<int>(std::floor((r.col + r.w) * width + 1e-9)));
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    for (int c = 0; c < 3; ++c)
                        buf[static_cast<size_t>(img.offset(0, y, x, c))] +=
                            patch_scale * ((c == ord % 3) ? kPatchUp : -kPatchDown);
        }
    }
    for (double& v : buf) {
        if (noise > 0.0) v += rng.normal(0.0, noise);
        v = std::min(1.0, std::max(0.0, v));
    }
    return img;
}

Dataset generate_synthetic(int n, const std::vector<AttributeSpec>& attrs, double correlation,
                           double noise, std::uint64_t seed, int height, int width) {
    if (n <= 0) throw ConfigError("generate_synthetic: sample count must be positive");
    if (correlation < 0.0 || correlation > 1.0)
        throw ConfigError("generate_synthetic: correlation outside [0,1]");
    if (noise < 0.0) throw ConfigError("generate_synthetic: negative noise level");
    validate_specs(attrs);
    const auto pairs = correlated_pairs(attrs);
    Dataset ds;
    ds.attributes = attrs;
    ds.height = height;
    ds.width = width;
    ds.samples.reserve(static_cast<size_t>(n));
    Rng rng(mix_seed(seed));
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.labels = sample_labels(attrs, pairs, correlation, rng);
        s.image = render_image(attrs, s.labels, noise, height, width, rng);
        char buf[16];
        std::snprintf(buf, sizeof buf, "img%05d", i);
        s.id = buf;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream labels(dir + "/labels.csv");
    if (!labels) throw DataError("save_dataset: cannot write " + dir + "/labels.csv");
    labels << "filename";
    for (const AttributeSpec& a : ds.attributes) labels << "," << a.name;
    labels << "\n";
    for (const Sample& s : ds.samples) {
        if (s.labels.size() != ds.attributes.size())
            throw DataError("save_dataset: sample " + s.id + " has wrong label count");
        labels << s.id << ".ppm";
        for (std::uint8_t l : s.labels) labels << "," << int(l);
        labels << "\n";
        write_ppm(dir + "/" + s.id + ".ppm", s.image);
    }
    std::ofstream specs(dir + "/attributes.csv");
    specs << "name,kind,row,col,h,w,base_rate\n";
    char buf[160];
    for (const AttributeSpec& a : ds.attributes) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", a.name.c_str(),
                      a.kind == AttrKind::Global ? "global" : "local", a.region.row,
                      a.region.col, a.region.h, a.region.w, a.base_rate);
        specs << buf;
    }
}

namespace {

std::vector<std::string> split_csv_row(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

Tensor resize_nearest(const Tensor& src, int height, int width) {
    if (height <= 0 || width <= 0) throw ConfigError("resize_nearest: non-positive target size");
    const Shape& s = src.shape();
    if (s.h == height && s.w == width) return src;
    Tensor dst(Shape{s.n, height, width, s.c});
    auto& out = dst.raw();
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < height; ++y) {
            const int sy = std::min<int>(s.h - 1, static_cast<int>((2 * y + 1) * s.h / (2 * height)));
            for (int x = 0; x < width; ++x) {
                const int sx = std::min<int>(s.w - 1, static_cast<int>((2 * x + 1) * s.w / (2 * width)));
                for (int c = 0; c < s.c; ++c)
                    out[static_cast<size_t>(dst.offset(n, y, x, c))] = src.at(n, sy, sx, c);
            }
        }
    return dst;
}

Dataset load_dataset(const std::string& image_dir, const std::string& labels_file,
                     int target_height, int target_width) {
    std::ifstream in(labels_file);
    if (!in) throw DataError("load_dataset: cannot open " + labels_file);
    std::string line;
    if (!std::getline(in, line)) throw DataError("load_dataset: " + labels_file + " is empty");
    const auto header = split_csv_row(line);
    if (header.size() < 2)
        throw DataError("load_dataset: header must list a filename column and attribute names");
    Dataset ds;
    for (size_t i = 1; i < header.size(); ++i) {
        AttributeSpec a;
        a.name = header[i];
        ds.attributes.push_back(std::move(a));
    }
    const size_t L = ds.attributes.size();
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_row(line);
        if (cells.size() != L + 1)
            throw DataError("load_dataset: row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(L + 1));
        Sample s;
        for (size_t i = 1; i < cells.size(); ++i) {
            if (cells[i] == "0") s.labels.push_back(0);
            else if (cells[i] == "1") s.labels.push_back(1);
            else
                throw DataError("load_dataset: row " + std::to_string(row) +
                                ": label \"" + cells[i] + "\" is not binary");
        }
        Tensor img = read_pnm(image_dir + "/" + cells[0]);
        if (img.shape().c == 1) {  // grayscale: replicate into three channels
            Tensor rgb(Shape{1, img.shape().h, img.shape().w, 3});
            auto& out = rgb.raw();
            for (int y = 0; y < img.shape().h; ++y)
                for (int x = 0; x < img.shape().w; ++x)
                    for (int c = 0; c < 3; ++c)
                        out[static_cast<size_t>(rgb.offset(0, y, x, c))] = img.at(0, y, x, 0);
            img = rgb;
        }
        if (ds.height == 0) {
            ds.height = target_height > 0 ? target_height : img.shape().h;
            ds.width = target_width > 0 ? target_width : img.shape().w;
        }
        s.image = resize_nearest(img, ds.height, ds.width);
        const std::string& fn = cells[0];
        const size_t dot = fn.rfind('.');
        s.id = dot == std::string::npos ? fn : fn.substr(0, dot);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<AttributeSpec> load_attribute_specs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_attribute_specs: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || split_csv_row(line).size() != 7)
        throw DataError("load_attribute_specs: bad header in " + path);
    std::vector<AttributeSpec> attrs;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_row(line);
        if (cells.size() != 7)
            throw DataError("load_attribute_specs: row " + std::to_string(row) + " malformed");
        AttributeSpec a;
        a.name = cells[0];
        if (cells[1] == "global") a.kind = AttrKind::Global;
        else if (cells[1] == "local") a.kind = AttrKind::Local;
        else
            throw DataError("load_attribute_specs: row " + std::to_string(row) +
                            ": unknown kind \"" + cells[1] + "\"");
        try {
            a.region = Region{std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]),
                              std::stod(cells[5])};
            a.base_rate = std::stod(cells[6]);
        } catch (const std::exception&) {
            throw DataError("load_attribute_specs: row " + std::to_string(row) +
                            ": non-numeric field");
        }
        attrs.push_back(std::move(a));
    }
    return attrs;
}

SplitResult split(const Dataset& ds, double train_ratio, double val_ratio, double test_ratio,
                  std::uint64_t seed) {
    const double ratios[3] = {train_ratio, val_ratio, test_ratio};
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) throw ConfigError("split: ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");
    const int n = ds.size();
    // Largest-remainder apportionment, ties to the earlier part.
    int sizes[3];
    double frac[3];
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = ratios[i] * n;
        sizes[i] = static_cast<int>(std::floor(exact + 1e-9));
        frac[i] = exact - sizes[i];
        assigned += sizes[i];
    }
    for (int left = n - assigned; left > 0; --left) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (frac[i] > frac[best]) best = i;
        ++sizes[best];
        frac[best] = -1.0;
    }
    for (int i = 0; i < 3; ++i)
        if (sizes[i] == 0) throw ConfigError("split: partition " + std::to_string(i) + " is empty");

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed));
    shuffle(order, rng);
    SplitResult out;
    Dataset* parts[3] = {&out.train, &out.val, &out.test};
    int cursor = 0;
    for (int i = 0; i < 3; ++i) {
        parts[i]->attributes = ds.attributes;
        parts[i]->height = ds.height;
        parts[i]->width = ds.width;
        for (int k = 0; k < sizes[i]; ++k)
            parts[i]->samples.push_back(ds.samples[static_cast<size_t>(order[static_cast<size_t>(cursor++)])]);
    }
    return out;
}

const char* grouping_kind_name(GroupingKind kind) {
    switch (kind) {
        case GroupingKind::GlobalLocal: return "global_local";
        case GroupingKind::RareFrequent: return "rare_frequent";
        case GroupingKind::TopDown: return "top_down";
        case GroupingKind::Random: return "random";
    }
    return "?";
}

GroupingKind grouping_kind_from(const std::string& name) {
    if (name == "global_local") return GroupingKind::GlobalLocal;
    if (name == "rare_frequent") return GroupingKind::RareFrequent;
    if (name == "top_down") return GroupingKind::TopDown;
    if (name == "random") return GroupingKind::Random;
    throw ConfigError("unknown grouping scheme: " + name);
}

GroupingScheme group_attributes(const std::vector<AttributeSpec>& attrs, GroupingKind kind,
                                std::uint64_t seed) {
    const int L = static_cast<int>(attrs.size());
    if (L < 2) throw ConfigError("group_attributes: need at least 2 attributes");
    GroupingScheme g;
    g.kind = kind;
    switch (kind) {
        case GroupingKind::GlobalLocal:
            for (int i = 0; i < L; ++i)
                (attrs[static_cast<size_t>(i)].kind == AttrKind::Global ? g.task_a : g.task_b)
                    .push_back(i);
            break;
        case GroupingKind::RareFrequent: {
            std::vector<int> order(static_cast<size_t>(L));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return attrs[static_cast<size_t>(a)].base_rate <
                       attrs[static_cast<size_t>(b)].base_rate;
            });
            for (int i = 0; i < L; ++i)
                (i < L / 2 ? g.task_a : g.task_b).push_back(order[static_cast<size_t>(i)]);
            break;
        }
        case GroupingKind::TopDown:
            for (int i = 0; i < L; ++i) {
                const AttributeSpec& a = attrs[static_cast<size_t>(i)];
                const bool to_a = a.kind == AttrKind::Local
                                      ? a.region.row + a.region.h / 2.0 < 0.5
                                      : i % 2 == 0;
                (to_a ? g.task_a : g.task_b).push_back(i);
            }
            break;
        case GroupingKind::Random: {
            std::vector<int> order(static_cast<size_t>(L));
            std::iota(order.begin(), order.end(), 0);
            Rng rng(mix_seed(seed));
            shuffle(order, rng);
            for (int i = 0; i < L; ++i)
                (i < L / 2 ? g.task_a : g.task_b).push_back(order[static_cast<size_t>(i)]);
            break;
        }
    }
    std::sort(g.task_a.begin(), g.task_a.end());
    std::sort(g.task_b.begin(), g.task_b.end());
    if (g.task_a.empty() || g.task_b.empty())
        throw ConfigError(std::string("group_attributes: ") + grouping_kind_name(kind) +
                          " produced an empty group");
    return g;
}

}  // namespace casnet
