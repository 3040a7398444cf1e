#include "dggn/episodes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dggn {
namespace {

std::vector<std::size_t> draw_without_replacement(std::size_t population, std::size_t count,
                                                  Rng& rng) {
    std::vector<std::size_t> pool(population);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, population - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

}  // namespace

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string_view partition_name(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::val: return "val";
        case Partition::test: return "test";
    }
    return "?";
}

Partition parse_partition(std::string_view name) {
    if (name == "train") return Partition::train;
    if (name == "val") return Partition::val;
    if (name == "test") return Partition::test;
    throw DatasetError("unknown split tag '" + std::string(name) + "'");
}

const std::vector<std::size_t>& DatasetSplit::classes(Partition p) const {
    switch (p) {
        case Partition::train: return train_classes;
        case Partition::val: return val_classes;
        case Partition::test: return test_classes;
    }
    return train_classes;
}

std::size_t DatasetSplit::num_samples() const {
    std::size_t n = 0;
    for (const auto& c : by_class) n += c.size();
    return n;
}

DatasetSplit synth_dataset(const SynthParams& params) {
    if (params.num_classes < 6) throw DatasetError("synth_dataset: need at least 6 classes");
    if (params.per_class == 0) throw DatasetError("synth_dataset: per_class must be positive");
    if (params.dim == 0) throw DatasetError("synth_dataset: dim must be positive");
    if (!(params.spread >= 0.0)) throw DatasetError("synth_dataset: spread must be >= 0");

    Rng rng(params.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    DatasetSplit out;
    out.dim = params.dim;
    out.by_class.resize(params.num_classes);
    std::size_t next_id = 0;
    for (std::size_t c = 0; c < params.num_classes; ++c) {
        std::vector<double> mean(params.dim);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& m : mean) {
                m = normal(rng);
                norm += m * m;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double& m : mean) m /= norm;

        auto& samples = out.by_class[c];
        samples.reserve(params.per_class);
        for (std::size_t s = 0; s < params.per_class; ++s) {
            Sample sample{mean, c, next_id++};
            if (params.spread > 0.0)
                for (double& f : sample.features) f += params.spread * normal(rng);
            samples.push_back(std::move(sample));
        }
    }

    const auto n = params.num_classes;
    const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
    for (std::size_t c = 0; c < n; ++c) {
        if (c < n_train)
            out.train_classes.push_back(c);
        else if (c < n_train + n_val)
            out.val_classes.push_back(c);
        else
            out.test_classes.push_back(c);
    }
    return out;
}

DatasetSplit load_feature_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open feature file " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DatasetError(path.string() + ": empty file");
    const auto header = split_commas(trim(line));
    if (header.size() < 3 || trim(header[0]) != "split" || trim(header[1]) != "class_id") {
        throw DatasetError(path.string() + ":1: header must be split,class_id,f_1,...,f_D");
    }
    for (std::size_t i = 2; i < header.size(); ++i) {
        if (trim(header[i]) != "f_" + std::to_string(i - 1)) {
            throw DatasetError(path.string() + ":1: expected column f_" + std::to_string(i - 1) +
                               ", found '" + std::string(trim(header[i])) + "'");
        }
    }
    const std::size_t dim = header.size() - 2;

    std::map<std::size_t, std::vector<Sample>> grouped;
    std::map<std::size_t, Partition> class_partition;
    std::size_t line_no = 1;
    std::size_t next_id = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
        const auto fields = split_commas(body);
        if (fields.size() != dim + 2) {
            throw DatasetError(where + "expected " + std::to_string(dim + 2) + " fields, found " +
                               std::to_string(fields.size()));
        }
        Partition part;
        try {
            part = parse_partition(trim(fields[0]));
        } catch (const DatasetError& e) {
            throw DatasetError(where + e.what());
        }
        std::size_t class_id = 0;
        {
            const auto f = trim(fields[1]);
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), class_id);
            if (ec != std::errc() || ptr != f.data() + f.size() || f.empty())
                throw DatasetError(where + "class_id '" + std::string(f) +
                                   "' is not a non-negative integer");
        }
        Sample sample;
        sample.class_id = class_id;
        sample.id = next_id++;
        sample.features.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const auto f = trim(fields[i + 2]);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size() || f.empty() || !std::isfinite(v))
                throw DatasetError(where + "feature f_" + std::to_string(i + 1) + " value '" +
                                   std::string(f) + "' is not a finite number");
            sample.features[i] = v;
        }
        const auto [it, inserted] = class_partition.emplace(class_id, part);
        if (!inserted && it->second != part) {
            throw DatasetError(where + "class " + std::to_string(class_id) + " appears in both " +
                               std::string(partition_name(it->second)) + " and " +
                               std::string(partition_name(part)));
        }
        grouped[class_id].push_back(std::move(sample));
    }
    if (grouped.empty()) throw DatasetError(path.string() + ": no samples");

    DatasetSplit out;
    out.dim = dim;
    const std::size_t num_classes = grouped.rbegin()->first + 1;
    out.by_class.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto it = grouped.find(c);
        if (it == grouped.end()) {
            throw DatasetError(path.string() + ": class " + std::to_string(c) +
                               " is empty (class ids must be contiguous from 0)");
        }
        out.by_class[c] = std::move(it->second);
        switch (class_partition.at(c)) {
            case Partition::train: out.train_classes.push_back(c); break;
            case Partition::val: out.val_classes.push_back(c); break;
            case Partition::test: out.test_classes.push_back(c); break;
        }
    }
    return out;
}

void save_feature_csv(const DatasetSplit& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write feature file " + path.string());
    out << "split,class_id";
    for (std::size_t i = 1; i <= data.dim; ++i) out << ",f_" << i;
    out << '\n';

    std::vector<Partition> part_of(data.num_classes(), Partition::train);
    for (auto p : {Partition::train, Partition::val, Partition::test})
        for (auto c : data.classes(p)) part_of[c] = p;

    char buf[64];
    for (std::size_t c = 0; c < data.num_classes(); ++c) {
        for (const auto& s : data.by_class[c]) {
            out << partition_name(part_of[c]) << ',' << c;
            for (double f : s.features) {
                // Shortest representation that round-trips exactly.
                const auto res = std::to_chars(buf, buf + sizeof buf, f);
                out << ',' << std::string_view(buf, res.ptr - buf);
            }
            out << '\n';
        }
    }
    if (!out) throw DatasetError("write failed for " + path.string());
}

Episode load_episode_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open episode file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DatasetError(path.string() + ": empty file");
    const auto header = split_commas(trim(line));
    if (header.size() < 3 || trim(header[0]) != "role" || trim(header[1]) != "class_id")
        throw DatasetError(path.string() + ":1: header must be role,class_id,f_1,...,f_D");
    for (std::size_t i = 2; i < header.size(); ++i)
        if (trim(header[i]) != "f_" + std::to_string(i - 1))
            throw DatasetError(path.string() + ":1: expected column f_" + std::to_string(i - 1));
    const std::size_t dim = header.size() - 2;

    std::vector<Sample> support, query;
    std::size_t line_no = 1, next_id = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
        const auto fields = split_commas(body);
        if (fields.size() != dim + 2)
            throw DatasetError(where + "expected " + std::to_string(dim + 2) + " fields, found " +
                               std::to_string(fields.size()));
        const auto role = trim(fields[0]);
        if (role != "support" && role != "query")
            throw DatasetError(where + "role must be support or query, got '" + std::string(role) + "'");
        Sample s;
        s.id = next_id++;
        const auto cf = trim(fields[1]);
        const auto [cptr, cec] = std::from_chars(cf.data(), cf.data() + cf.size(), s.class_id);
        if (cec != std::errc() || cptr != cf.data() + cf.size() || cf.empty())
            throw DatasetError(where + "class_id '" + std::string(cf) + "' is not a non-negative integer");
        s.features.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const auto f = trim(fields[i + 2]);
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), s.features[i]);
            if (ec != std::errc() || ptr != f.data() + f.size() || f.empty() || !std::isfinite(s.features[i]))
                throw DatasetError(where + "feature f_" + std::to_string(i + 1) + " is not a finite number");
        }
        (role == "support" ? support : query).push_back(std::move(s));
    }
    if (support.empty()) throw DatasetError(path.string() + ": no support rows");
    if (query.empty()) throw DatasetError(path.string() + ": no query rows");

    std::map<std::size_t, std::size_t> counts;
    for (const auto& s : support) ++counts[s.class_id];
    const std::size_t shot = counts.begin()->second;
    for (const auto& [c, n] : counts)
        if (n != shot)
            throw DatasetError(path.string() + ": support class " + std::to_string(c) + " has " +
                               std::to_string(n) + " rows, class " +
                               std::to_string(counts.begin()->first) + " has " + std::to_string(shot));

    Episode ep;
    ep.way = counts.size();
    ep.shot = shot;
    ep.query_count = query.size();
    std::size_t local = 0;
    for (const auto& [c, n] : counts) ep.class_relabeling[c] = local++;
    for (auto& s : support) ep.support_labels.push_back(ep.class_relabeling.at(s.class_id));
    for (auto& s : query) {
        const auto it = ep.class_relabeling.find(s.class_id);
        ep.query_labels.push_back(it == ep.class_relabeling.end() ? ep.way : it->second);
    }
    ep.support = std::move(support);
    ep.query = std::move(query);
    return ep;
}

std::size_t Episode::dim() const {
    if (!support.empty()) return support.front().features.size();
    if (!query.empty()) return query.front().features.size();
    return 0;
}

std::vector<std::size_t> Episode::labels() const {
    std::vector<std::size_t> out = support_labels;
    out.insert(out.end(), query_labels.begin(), query_labels.end());
    return out;
}

Episode sample_episode(const DatasetSplit& data, Partition partition, const EpisodeShape& shape,
                       Rng& rng) {
    const auto& classes = data.classes(partition);
    const std::string part = std::string(partition_name(partition));
    if (shape.way == 0 || shape.shot == 0)
        throw DatasetError("sample_episode: way and shot must be positive");
    if (!shape.allow_unbalanced && shape.query % shape.way != 0) {
        throw DatasetError("sample_episode: query count " + std::to_string(shape.query) +
                           " is not divisible by way " + std::to_string(shape.way));
    }
    if (classes.size() < shape.way) {
        throw DatasetError("sample_episode: partition " + part + " has " +
                           std::to_string(classes.size()) + " classes, need " +
                           std::to_string(shape.way));
    }
    const std::size_t base = shape.query / shape.way;
    const std::size_t extra = shape.query % shape.way;
    const std::size_t need = shape.shot + base + (extra ? 1 : 0);
    for (auto c : classes) {
        // Checked up front so that feasibility does not depend on the draw.
        if (data.by_class[c].size() < need) {
            throw DatasetError("sample_episode: class " + std::to_string(c) + " has " +
                               std::to_string(data.by_class[c].size()) + " samples, need " +
                               std::to_string(need));
        }
    }

    Episode ep;
    ep.way = shape.way;
    ep.shot = shape.shot;
    ep.query_count = shape.query;

    const auto chosen = draw_without_replacement(classes.size(), shape.way, rng);
    for (std::size_t k = 0; k < shape.way; ++k) {
        const std::size_t class_id = classes[chosen[k]];
        ep.class_relabeling[class_id] = k;
        const auto& pool = data.by_class[class_id];
        const std::size_t n_query = base + (k < extra ? 1 : 0);
        const auto picks = draw_without_replacement(pool.size(), shape.shot + n_query, rng);
        for (std::size_t s = 0; s < shape.shot; ++s) {
            ep.support.push_back(pool[picks[s]]);
            ep.support_labels.push_back(k);
        }
        for (std::size_t q = 0; q < n_query; ++q) {
            ep.query.push_back(pool[picks[shape.shot + q]]);
            ep.query_labels.push_back(k);
        }
    }
    return ep;
}

void validate_episode(const Episode& ep) {
    if (ep.way == 0 || ep.shot == 0) throw DatasetError("episode: way and shot must be positive");
    if (ep.support.size() != ep.way * ep.shot || ep.support_labels.size() != ep.support.size())
        throw DatasetError("episode: support size " + std::to_string(ep.support.size()) +
                           " != way*shot " + std::to_string(ep.way * ep.shot));
    if (ep.query.size() != ep.query_count || ep.query_labels.size() != ep.query.size())
        throw DatasetError("episode: query size mismatch");
    std::vector<std::size_t> per_class(ep.way, 0);
    for (auto l : ep.support_labels) {
        if (l >= ep.way) throw DatasetError("episode: support label out of range");
        ++per_class[l];
    }
    for (std::size_t k = 0; k < ep.way; ++k)
        if (per_class[k] != ep.shot)
            throw DatasetError("episode: class " + std::to_string(k) + " has " +
                               std::to_string(per_class[k]) + " support samples, expected " +
                               std::to_string(ep.shot));
    for (auto l : ep.query_labels)
        if (l >= ep.way) throw DatasetError("episode: query label not among support classes");
    const std::size_t dim = ep.dim();
    for (const auto* set : {&ep.support, &ep.query})
        for (const auto& s : *set)
            if (s.features.size() != dim) throw DatasetError("episode: inconsistent feature length");
    std::set<std::size_t> ids;
    for (const auto* set : {&ep.support, &ep.query})
        for (const auto& s : *set)
            if (!ids.insert(s.id).second)
                throw DatasetError("episode: sample " + std::to_string(s.id) + " used twice");
}

}  // namespace dggn
