#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffl/rng.hpp"
#include "ffl/tensor.hpp"

namespace ffl {

/// Labelled example collection. Examples are (N, D, H, W), labels in [0, C).
struct Dataset {
    Tensor examples;
    std::vector<int> labels;
    std::size_t class_count = 0;
    std::string name;

    std::size_t size() const { return labels.size(); }
    std::vector<std::size_t> example_shape() const {
        return {examples.shape.begin() + 1, examples.shape.end()};
    }
};

struct SplitSets {
    std::vector<std::size_t> train, val, test;
};

/// One client's view of a parent dataset: an index subset, an optional
/// class restriction/relabeling (domain scenarios) and a label permutation.
/// The effective label of parent index i is perm[base_relabel[labels[i]]].
struct Partition {
    std::size_t client_id = 0;
    std::vector<std::size_t> indices;  // into the parent dataset
    std::vector<int> base_relabel;     // parent class -> local class, -1 if absent
    std::vector<int> perm;             // permutation over [0, local_classes)
    std::size_t local_classes = 0;
    SplitSets split;
    int domain_id = -1;

    bool identity_perm() const {
        for (std::size_t i = 0; i < perm.size(); ++i)
            if (perm[i] != static_cast<int>(i)) return false;
        return true;
    }

    int effective_label(int parent_label) const {
        const int base = base_relabel[static_cast<std::size_t>(parent_label)];
        if (base < 0)
            throw std::logic_error("Partition: example of a class outside this partition");
        return perm[static_cast<std::size_t>(base)];
    }
};

struct DomainSpec {
    std::string domain_name;
    std::vector<int> classes;  // parent class ids, disjoint across specs
    std::size_t clients_per_domain = 4;
};

namespace detail {

inline Partition blank_partition(std::size_t client_id, std::size_t parent_classes) {
    Partition p;
    p.client_id = client_id;
    p.local_classes = parent_classes;
    p.base_relabel.resize(parent_classes);
    p.perm.resize(parent_classes);
    for (std::size_t c = 0; c < parent_classes; ++c) {
        p.base_relabel[c] = static_cast<int>(c);
        p.perm[c] = static_cast<int>(c);
    }
    return p;
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& d) {
    std::vector<std::vector<std::size_t>> by_class(d.class_count);
    for (std::size_t i = 0; i < d.size(); ++i)
        by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);
    return by_class;
}

/// Deterministic 80/10/10 train/val/test split of a partition's indices.
inline void make_holdout_split(Partition& p, std::uint64_t seed) {
    std::vector<std::size_t> shuffled = p.indices;
    rng::Stream rs(rng::derive(seed, rng::kHoldout, p.client_id));
    rs.shuffle(shuffled);
    const std::size_t n = shuffled.size();
    const std::size_t n_val = n / 10, n_test = n / 10;
    p.split.val.assign(shuffled.begin(), shuffled.begin() + n_val);
    p.split.test.assign(shuffled.begin() + n_val, shuffled.begin() + n_val + n_test);
    p.split.train.assign(shuffled.begin() + n_val + n_test, shuffled.end());
}

}  // namespace detail

/// Class-stratified even split: per class, instances are shuffled and dealt
/// round-robin with a cursor that continues across classes, so per-class
/// counts differ by at most one and totals stay balanced.
inline std::vector<Partition> split_iid(const Dataset& d, std::size_t k,
                                        std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("split_iid: need at least one client");
    if (k > d.size())
        throw std::invalid_argument("split_iid: more clients (" + std::to_string(k) +
                                    ") than instances (" + std::to_string(d.size()) + ")");
    std::vector<Partition> parts;
    parts.reserve(k);
    for (std::size_t c = 0; c < k; ++c)
        parts.push_back(detail::blank_partition(c, d.class_count));

    auto by_class = detail::indices_by_class(d);
    std::size_t cursor = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        rng::Stream rs(rng::derive(seed, rng::kSplit, c));
        rs.shuffle(by_class[c]);
        for (std::size_t idx : by_class[c]) {
            parts[cursor % k].indices.push_back(idx);
            ++cursor;
        }
    }
    for (auto& p : parts) detail::make_holdout_split(p, seed);
    return parts;
}

/// Per class, a Dirichlet(alpha) draw sets client proportions; instances are
/// assigned by largest-remainder rounding so each instance lands exactly
/// once. Clients left empty are repaired with one instance from the largest
/// partition.
inline std::vector<Partition> split_dirichlet(const Dataset& d, std::size_t k,
                                              double alpha, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("split_dirichlet: need at least one client");
    if (!(alpha > 0.0)) throw std::invalid_argument("split_dirichlet: alpha must be > 0");
    std::vector<Partition> parts;
    parts.reserve(k);
    for (std::size_t c = 0; c < k; ++c)
        parts.push_back(detail::blank_partition(c, d.class_count));

    auto by_class = detail::indices_by_class(d);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& pool = by_class[c];
        rng::Stream shuffle_rs(rng::derive(seed, rng::kSplit, c));
        shuffle_rs.shuffle(pool);
        rng::Stream dir_rs(rng::derive(seed, rng::kDirichlet, c));
        std::vector<double> prop = dir_rs.dirichlet(alpha, k);

        const std::size_t n = pool.size();
        std::vector<std::size_t> count(k);
        std::vector<std::pair<double, std::size_t>> remainder(k);
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const double exact = prop[i] * static_cast<double>(n);
            count[i] = static_cast<std::size_t>(exact);
            remainder[i] = {exact - static_cast<double>(count[i]), i};
            assigned += count[i];
        }
        std::stable_sort(remainder.begin(), remainder.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++count[remainder[r % k].second];

        std::size_t pos = 0;
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < count[i]; ++j)
                parts[i].indices.push_back(pool[pos + j]);
            pos += count[i];
        }
    }

    // Repair empties by taking one instance from the currently largest client.
    for (auto& p : parts) {
        while (p.indices.empty()) {
            auto& donor = *std::max_element(
                parts.begin(), parts.end(), [](const Partition& a, const Partition& b) {
                    return a.indices.size() < b.indices.size();
                });
            if (donor.indices.size() <= 1)
                throw std::invalid_argument("split_dirichlet: not enough instances to cover all clients");
            p.indices.push_back(donor.indices.back());
            donor.indices.pop_back();
        }
    }
    for (auto& p : parts) detail::make_holdout_split(p, seed);
    return parts;
}

/// Replaces the identity permutation with a uniformly random one drawn from
/// an engine seeded with global_seed + client_id, so every client's relabeling
/// is reproducible in isolation.
inline Partition permute_labels(const Partition& p, std::uint64_t global_seed,
                                std::size_t client_id) {
    if (!p.identity_perm())
        throw std::invalid_argument("permute_labels: partition already permuted");
    Partition out = p;
    rng::Stream rs(global_seed + client_id);
    out.perm = rs.permutation_int(static_cast<int>(p.local_classes));
    return out;
}

/// Domain-grouped split: each spec's classes become a sub-dataset relabeled
/// to [0, C_domain), dealt equally to its clients, then label-permuted per
/// client. Client ids run consecutively across domains.
inline std::vector<Partition> split_domains(const Dataset& d,
                                            const std::vector<DomainSpec>& specs,
                                            std::uint64_t seed) {
    std::vector<bool> seen(d.class_count, false);
    for (const auto& s : specs)
        for (int c : s.classes) {
            if (c < 0 || static_cast<std::size_t>(c) >= d.class_count)
                throw std::invalid_argument("split_domains: class " + std::to_string(c) +
                                            " outside parent dataset");
            if (seen[static_cast<std::size_t>(c)])
                throw std::invalid_argument("split_domains: class " + std::to_string(c) +
                                            " appears in more than one domain");
            seen[static_cast<std::size_t>(c)] = true;
        }

    auto by_class = detail::indices_by_class(d);
    std::vector<Partition> parts;
    std::size_t client_id = 0;
    for (std::size_t di = 0; di < specs.size(); ++di) {
        const auto& spec = specs[di];
        const std::size_t c_dom = spec.classes.size();

        std::vector<std::size_t> pool;
        for (int c : spec.classes)
            pool.insert(pool.end(), by_class[static_cast<std::size_t>(c)].begin(),
                        by_class[static_cast<std::size_t>(c)].end());
        rng::Stream rs(rng::derive(seed, rng::kSplit, di, 0x0d));
        rs.shuffle(pool);

        const std::size_t per_client = pool.size() / spec.clients_per_domain;
        if (per_client == 0)
            throw std::invalid_argument("split_domains: domain '" + spec.domain_name +
                                        "' has fewer instances than clients");
        for (std::size_t ci = 0; ci < spec.clients_per_domain; ++ci, ++client_id) {
            Partition p;
            p.client_id = client_id;
            p.domain_id = static_cast<int>(di);
            p.local_classes = c_dom;
            p.base_relabel.assign(d.class_count, -1);
            for (std::size_t j = 0; j < c_dom; ++j)
                p.base_relabel[static_cast<std::size_t>(spec.classes[j])] =
                    static_cast<int>(j);
            p.perm.resize(c_dom);
            for (std::size_t j = 0; j < c_dom; ++j) p.perm[j] = static_cast<int>(j);
            p.indices.assign(pool.begin() + ci * per_client,
                             pool.begin() + (ci + 1) * per_client);
            detail::make_holdout_split(p, seed);
            parts.push_back(permute_labels(p, seed, p.client_id));
        }
    }
    return parts;
}

struct BlobsParams {
    std::size_t classes = 10;
    std::size_t n = 2000;
    std::size_t height = 8, width = 8, depth = 1;
    double noise = 0.3;
};

/// Gaussian-blob classification set: one uniform-random prototype image per
/// class, examples are prototype + noise * N(0,1). Linearly separable at low
/// noise. Example order is shuffled so slicing is class-mixed.
inline Dataset make_blobs(const BlobsParams& bp, std::uint64_t seed) {
    if (bp.classes == 0 || bp.n == 0)
        throw std::invalid_argument("make_blobs: classes and n must be positive");
    const std::size_t pix = bp.depth * bp.height * bp.width;
    rng::Stream proto_rs(rng::derive(seed, rng::kProto));
    std::vector<double> protos(bp.classes * pix);
    for (double& x : protos) x = proto_rs.uniform();

    Dataset d;
    d.name = "synthetic-blobs";
    d.class_count = bp.classes;
    d.examples = Tensor({bp.n, bp.depth, bp.height, bp.width});
    d.labels.resize(bp.n);
    rng::Stream noise_rs(rng::derive(seed, rng::kNoise));
    for (std::size_t i = 0; i < bp.n; ++i) {
        const std::size_t cls = i % bp.classes;
        d.labels[i] = static_cast<int>(cls);
        double* row = &d.examples.data[i * pix];
        const double* proto = &protos[cls * pix];
        for (std::size_t j = 0; j < pix; ++j)
            row[j] = proto[j] + bp.noise * noise_rs.normal();
    }

    rng::Stream order_rs(rng::derive(seed, rng::kOrder));
    const auto order = order_rs.permutation(bp.n);
    Tensor shuffled_ex({bp.n, bp.depth, bp.height, bp.width});
    std::vector<int> shuffled_lb(bp.n);
    for (std::size_t i = 0; i < bp.n; ++i) {
        std::copy_n(&d.examples.data[order[i] * pix], pix, &shuffled_ex.data[i * pix]);
        shuffled_lb[i] = d.labels[order[i]];
    }
    d.examples = std::move(shuffled_ex);
    d.labels = std::move(shuffled_lb);
    return d;
}

/// Malformed-file error carrying the byte offset of the problem.
struct FormatError : std::runtime_error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t off)
        : std::runtime_error(msg + " (byte offset " + std::to_string(off) + ")"),
          offset(off) {}
};

// Binary image container: magic "FFL1", five u32 little-endian fields
// (N, H, W, D, C), N*H*W*D u8 pixels, N u8 labels.
inline constexpr char kTinyImagesMagic[4] = {'F', 'F', 'L', '1'};

inline Dataset load_tiny_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    std::size_t off = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (bytes.size() - off < n)
            throw FormatError(std::string("truncated file while reading ") + what,
                              bytes.size());
    };
    need(4, "magic");
    if (std::memcmp(bytes.data(), kTinyImagesMagic, 4) != 0)
        throw FormatError("bad magic, expected \"FFL1\"", 0);
    off = 4;

    auto read_u32 = [&](const char* what) {
        need(4, what);
        std::uint32_t v = static_cast<std::uint32_t>(bytes[off]) |
                          static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
                          static_cast<std::uint32_t>(bytes[off + 2]) << 16 |
                          static_cast<std::uint32_t>(bytes[off + 3]) << 24;
        off += 4;
        return v;
    };
    const std::uint32_t n = read_u32("N");
    const std::uint32_t h = read_u32("H");
    const std::uint32_t w = read_u32("W");
    const std::uint32_t dep = read_u32("D");
    const std::uint32_t c = read_u32("C");
    if (n == 0 || h == 0 || w == 0 || dep == 0 || c == 0)
        throw FormatError("zero dimension in header", 4);

    const std::size_t pix = static_cast<std::size_t>(h) * w * dep;
    need(static_cast<std::size_t>(n) * pix, "pixel data");
    Dataset d;
    d.name = path;
    d.class_count = c;
    d.examples = Tensor({n, dep, h, w});
    // Stored pixel order is H x W x D per image; internal layout is D x H x W.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t z = 0; z < dep; ++z)
                    d.examples.data[((i * dep + z) * h + y) * w + x] =
                        static_cast<double>(bytes[off + ((i * h + y) * w + x) * dep + z]) /
                        255.0;
    off += static_cast<std::size_t>(n) * pix;

    need(n, "labels");
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char lb = bytes[off + i];
        if (lb >= c)
            throw FormatError("label " + std::to_string(lb) + " >= class count " +
                              std::to_string(c), off + i);
        d.labels[i] = static_cast<int>(lb);
    }
    off += n;
    if (off != bytes.size())
        throw FormatError("trailing bytes after labels", off);
    return d;
}

inline void save_tiny_images(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    out.write(kTinyImagesMagic, 4);
    auto write_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    const std::size_t n = d.size();
    const std::size_t dep = d.examples.shape[1], h = d.examples.shape[2],
                      w = d.examples.shape[3];
    write_u32(static_cast<std::uint32_t>(n));
    write_u32(static_cast<std::uint32_t>(h));
    write_u32(static_cast<std::uint32_t>(w));
    write_u32(static_cast<std::uint32_t>(dep));
    write_u32(static_cast<std::uint32_t>(d.class_count));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t z = 0; z < dep; ++z) {
                    double v = d.examples.data[((i * dep + z) * h + y) * w + x];
                    v = std::clamp(v, 0.0, 1.0);
                    const auto byte = static_cast<unsigned char>(v * 255.0 + 0.5);
                    out.write(reinterpret_cast<const char*>(&byte), 1);
                }
    for (std::size_t i = 0; i < n; ++i) {
        const auto lb = static_cast<unsigned char>(d.labels[i]);
        out.write(reinterpret_cast<const char*>(&lb), 1);
    }
}

}  // namespace ffl
