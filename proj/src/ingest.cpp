#include "magflow/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>

#include "magflow/common.hpp"

namespace magflow {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

[[noreturn]] void bad_row(const std::string& path, std::size_t lineno, const std::string& why) {
    throw IoError(path + ":" + std::to_string(lineno) + ": " + why);
}

}  // namespace

RawCorpus load_checkins(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open check-in file: " + path);

    RawCorpus corpus;
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line)) throw IoError(path + ": empty check-in file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "user_id,poi_id,timestamp,lat,lon,category")
        bad_row(path, lineno, "unexpected header '" + line + "'");

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 6) bad_row(path, lineno, "expected 6 fields, got " + std::to_string(fields.size()));

        CheckIn c;
        if (!parse_number(fields[2], c.timestamp) || c.timestamp < 0)
            bad_row(path, lineno, "bad timestamp '" + fields[2] + "'");
        if (!parse_double(fields[3], c.lat) || c.lat < -90.0 || c.lat > 90.0)
            bad_row(path, lineno, "latitude out of range '" + fields[3] + "'");
        if (!parse_double(fields[4], c.lon) || c.lon < -180.0 || c.lon > 180.0)
            bad_row(path, lineno, "longitude out of range '" + fields[4] + "'");
        c.user_id = corpus.users.intern(fields[0]);
        c.poi_id = corpus.pois.intern(fields[1]);
        c.category_id = corpus.categories.intern(fields[5]);
        corpus.checkins.push_back(c);
    }
    if (corpus.checkins.empty()) throw IoError(path + ": no check-in records");
    return corpus;
}

Dataset filter_and_segment(const RawCorpus& corpus, int min_poi_visits, int min_len, int max_len) {
    Dataset ds;

    std::vector<std::int64_t> poi_visits(corpus.pois.size(), 0);
    for (const auto& c : corpus.checkins) poi_visits[c.poi_id]++;
    for (auto v : poi_visits)
        if (v > 0 && v < min_poi_visits) ds.report.pois_removed++;

    // Per-user streams in file order, then a stable sort by timestamp.
    std::vector<std::vector<CheckIn>> streams(corpus.users.size());
    std::vector<std::int64_t> raw_user_counts(corpus.users.size(), 0);
    for (const auto& c : corpus.checkins) {
        raw_user_counts[c.user_id]++;
        if (poi_visits[c.poi_id] < min_poi_visits) {
            ds.report.checkins_dropped++;
            continue;
        }
        streams[c.user_id].push_back(c);
    }

    // Re-intern ids over the filtered corpus so tables have no dead rows.
    std::unordered_map<std::int32_t, std::int32_t> poi_map, user_map, cat_map;
    auto remap = [](std::unordered_map<std::int32_t, std::int32_t>& m, std::int32_t old_id) {
        auto it = m.find(old_id);
        if (it != m.end()) return it->second;
        const auto id = static_cast<std::int32_t>(m.size());
        m.emplace(old_id, id);
        return id;
    };

    for (std::size_t uid = 0; uid < streams.size(); ++uid) {
        auto& stream = streams[uid];
        if (static_cast<int>(stream.size()) < min_len) {
            if (raw_user_counts[uid] > 0) ds.report.users_dropped++;
            ds.report.checkins_dropped += stream.size();
            continue;
        }
        std::stable_sort(stream.begin(), stream.end(),
                         [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });

        // Greedy maximal chunks of max_len; trailing chunk < min_len is dropped.
        std::size_t pos = 0;
        while (pos < stream.size()) {
            const std::size_t take = std::min<std::size_t>(max_len, stream.size() - pos);
            if (static_cast<int>(take) < min_len) {
                ds.report.checkins_dropped += take;
                break;
            }
            Trajectory traj;
            traj.steps.assign(stream.begin() + pos, stream.begin() + pos + take);
            traj.gaps.resize(take);
            traj.gaps[0] = 0;
            for (std::size_t t = 1; t < take; ++t)
                traj.gaps[t] = traj.steps[t].timestamp - traj.steps[t - 1].timestamp;
            for (auto& c : traj.steps) {
                c.poi_id = remap(poi_map, c.poi_id);
                c.user_id = remap(user_map, c.user_id);
                c.category_id = remap(cat_map, c.category_id);
            }
            traj.user_id = traj.steps.front().user_id;
            ds.trajectories.push_back(std::move(traj));
            pos += take;
        }
    }

    ds.n_pois = poi_map.size();
    ds.n_users = user_map.size();
    ds.n_categories = cat_map.size();
    ds.report.trajectories = ds.trajectories.size();

    ds.poi_lat.assign(ds.n_pois, 0.0);
    ds.poi_lon.assign(ds.n_pois, 0.0);
    std::vector<bool> seen(ds.n_pois, false);
    for (const auto& traj : ds.trajectories)
        for (const auto& c : traj.steps) {
            if (seen[c.poi_id]) continue;
            seen[c.poi_id] = true;
            ds.poi_lat[c.poi_id] = c.lat;
            ds.poi_lon[c.poi_id] = c.lon;
        }
    return ds;
}

DatasetSplit split_8_1_1(std::size_t n_trajectories, std::uint64_t seed) {
    if (n_trajectories < 10)
        throw ValidationError("split_8_1_1 needs at least 10 trajectories, got " +
                              std::to_string(n_trajectories));
    std::vector<std::size_t> order(n_trajectories);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_train = (n_trajectories * 8 + 5) / 10;  // round(0.8 n)
    const std::size_t rest = n_trajectories - n_train;
    const std::size_t n_val = rest / 2;

    DatasetSplit split;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    split.test.assign(order.begin() + n_train + n_val, order.end());
    return split;
}

void write_split_manifest(const std::string& path, const DatasetSplit& split) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write split manifest: " + path);
    auto dump = [&out](const char* name, const std::vector<std::size_t>& ids) {
        out << "[" << name << "]\n";
        for (auto id : ids) out << id << "\n";
    };
    dump("train", split.train);
    dump("val", split.val);
    dump("test", split.test);
}

DatasetSplit read_split_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read split manifest: " + path);
    DatasetSplit split;
    std::vector<std::size_t>* cur = nullptr;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line == "[train]") { cur = &split.train; continue; }
        if (line == "[val]") { cur = &split.val; continue; }
        if (line == "[test]") { cur = &split.test; continue; }
        std::size_t id = 0;
        if (!cur || !parse_number(line, id))
            throw IoError(path + ":" + std::to_string(lineno) + ": bad manifest line '" + line + "'");
        cur->push_back(id);
    }
    return split;
}

}  // namespace magflow
