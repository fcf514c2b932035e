#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "magflow/checkin.hpp"

namespace magflow {

/// Raw-token -> dense-index vocabulary, first appearance order.
struct Vocab {
    std::unordered_map<std::string, std::int32_t> index;
    std::vector<std::string> tokens;

    std::int32_t intern(const std::string& tok) {
        auto it = index.find(tok);
        if (it != index.end()) return it->second;
        const auto id = static_cast<std::int32_t>(tokens.size());
        index.emplace(tok, id);
        tokens.push_back(tok);
        return id;
    }
    std::size_t size() const { return tokens.size(); }
};

struct RawCorpus {
    std::vector<CheckIn> checkins;  // file order
    Vocab users, pois, categories;
};

struct SegmentReport {
    std::size_t pois_removed = 0;       // below min_poi_visits
    std::size_t users_dropped = 0;      // < min_len check-ins after filtering
    std::size_t checkins_dropped = 0;   // on removed POIs or in short tails
    std::size_t trajectories = 0;
};

/// The model-facing corpus: ids re-indexed densely over the filtered
/// check-ins so every table row is actually used.
struct Dataset {
    std::vector<Trajectory> trajectories;
    std::size_t n_pois = 0;
    std::size_t n_users = 0;
    std::size_t n_categories = 0;
    std::vector<double> poi_lat, poi_lon;   // per filtered poi id
    SegmentReport report;
};

/// Parses the check-in CSV (header `user_id,poi_id,timestamp,lat,lon,category`).
/// Malformed rows and out-of-range coordinates raise IoError with the line number.
RawCorpus load_checkins(const std::string& path);

/// Drops POIs visited fewer than min_poi_visits times, sorts each user's stream
/// by timestamp, cuts it greedily into chunks of max_len and drops trailing
/// chunks shorter than min_len. Ids are re-interned over the survivors.
Dataset filter_and_segment(const RawCorpus& corpus, int min_poi_visits = 5,
                           int min_len = 3, int max_len = 101);

/// Seeded-shuffle 8:1:1 split by trajectory index. Throws ValidationError
/// when fewer than 10 trajectories are available.
DatasetSplit split_8_1_1(std::size_t n_trajectories, std::uint64_t seed);

void write_split_manifest(const std::string& path, const DatasetSplit& split);
DatasetSplit read_split_manifest(const std::string& path);

}  // namespace magflow
