#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace magflow {

/// One geo-tagged user event. Ids are dense integer indices into the
/// vocabularies built at load time (first-appearance order).
struct CheckIn {
    std::int32_t user_id = 0;
    std::int32_t poi_id = 0;
    std::int64_t timestamp = 0;  // UTC seconds since epoch
    double lat = 0.0;
    double lon = 0.0;
    std::int32_t category_id = 0;
};

/// Ordered per-user slice of check-ins. gaps[0] == 0 and
/// gaps[t] == timestamp[t] - timestamp[t-1] for t >= 1.
struct Trajectory {
    std::int32_t user_id = 0;
    std::vector<CheckIn> steps;
    std::vector<std::int64_t> gaps;

    std::size_t length() const { return steps.size(); }
};

constexpr int kHourOfWeekBins = 168;
constexpr std::int64_t kSecondsPerWeek = 604800;

/// Hour-of-week bin in UTC, Monday 00:00 = bin 0, Sunday 23:00 = bin 167.
struct TimeBinner {
    int n_bins = kHourOfWeekBins;

    int bin(std::int64_t timestamp_utc) const {
        // 1970-01-01 was a Thursday; +3 shifts to Monday = 0.
        const std::int64_t day = timestamp_utc / 86400;
        const int dow = static_cast<int>((day + 3) % 7);
        const int hour = static_cast<int>((timestamp_utc % 86400) / 3600);
        return dow * 24 + hour;
    }
};

inline int time_bin(std::int64_t timestamp_utc) { return TimeBinner{}.bin(timestamp_utc); }

inline int hour_of_day(std::int64_t timestamp_utc) {
    return static_cast<int>((timestamp_utc % 86400) / 3600);
}

inline int day_of_week(std::int64_t timestamp_utc) {
    return static_cast<int>((timestamp_utc / 86400 + 3) % 7);
}

struct DatasetSplit {
    std::vector<std::size_t> train;  // trajectory indices
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

}  // namespace magflow
