#include "magflow/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "magflow/common.hpp"

namespace magflow {

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double deg = M_PI / 180.0;
    const double p1 = lat1 * deg, p2 = lat2 * deg;
    const double dp = (lat2 - lat1) * deg;
    const double dl = (lon2 - lon1) * deg;
    const double s1 = std::sin(dp / 2), s2 = std::sin(dl / 2);
    const double a = s1 * s1 + std::cos(p1) * std::cos(p2) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

std::int64_t GeoGraph::edge_id(std::uint32_t a, std::uint32_t b) const {
    if (a == b) return -1;
    if (a > b) std::swap(a, b);
    if (!lookup_built_) build_lookup();
    const std::uint64_t key = (static_cast<std::uint64_t>(a) << 32) | b;
    auto it = edge_lookup_.find(key);
    return it == edge_lookup_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

void GeoGraph::build_lookup() const {
    edge_lookup_.reserve(edges.size() * 2);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const std::uint64_t key = (static_cast<std::uint64_t>(edges[e].i) << 32) | edges[e].j;
        edge_lookup_.emplace(key, e);
    }
    lookup_built_ = true;
}

std::uint64_t GeoGraph::content_hash() const {
    std::uint64_t h = fnv1a64(&n_pois, sizeof(n_pois));
    h = fnv1a64(&radius_km, sizeof(radius_km), h);
    h = fnv1a64(&sigma_geo_km, sizeof(sigma_geo_km), h);
    for (const auto& e : edges) {
        h = fnv1a64(&e.i, sizeof(e.i), h);
        h = fnv1a64(&e.j, sizeof(e.j), h);
        h = fnv1a64(&e.weight, sizeof(e.weight), h);
    }
    return h;
}

GeoGraph build_radius_graph(const std::vector<double>& lat, const std::vector<double>& lon,
                            double radius_km, double sigma_geo_km) {
    if (lat.size() != lon.size()) throw ValidationError("lat/lon size mismatch");
    const std::size_t n = lat.size();
    if (n < 2) throw ValidationError("radius graph needs at least 2 POIs");

    GeoGraph g;
    g.n_pois = n;
    g.radius_km = radius_km;
    g.sigma_geo_km = sigma_geo_km;

    // Grid cells sized so any pair within radius_km lies in adjacent cells.
    // Latitude degrees per km is constant; longitude shrinks by cos(lat),
    // so the lon cell width uses the widest cosine in the data's lat range.
    constexpr double kKmPerDegLat = M_PI * kEarthRadiusKm / 180.0;
    double min_abs_cos = 1.0;
    for (std::size_t p = 0; p < n; ++p)
        min_abs_cos = std::min(min_abs_cos, std::cos(lat[p] * M_PI / 180.0));
    min_abs_cos = std::max(min_abs_cos, 1e-6);

    const double cell_lat_deg = radius_km / kKmPerDegLat;
    const double cell_lon_deg = radius_km / (kKmPerDegLat * min_abs_cos);

    auto cell_of = [&](std::size_t p) {
        const auto cx = static_cast<std::int64_t>(std::floor(lat[p] / cell_lat_deg));
        const auto cy = static_cast<std::int64_t>(std::floor(lon[p] / cell_lon_deg));
        return std::pair<std::int64_t, std::int64_t>{cx, cy};
    };
    auto cell_key = [](std::int64_t cx, std::int64_t cy) {
        return (static_cast<std::uint64_t>(cx) << 32) ^ static_cast<std::uint64_t>(cy & 0xffffffff);
    };

    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
    buckets.reserve(n);
    for (std::size_t p = 0; p < n; ++p) {
        const auto [cx, cy] = cell_of(p);
        buckets[cell_key(cx, cy)].push_back(static_cast<std::uint32_t>(p));
    }

    for (std::size_t p = 0; p < n; ++p) {
        const auto [cx, cy] = cell_of(p);
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                auto it = buckets.find(cell_key(cx + dx, cy + dy));
                if (it == buckets.end()) continue;
                for (const std::uint32_t q : it->second) {
                    if (q <= p) continue;  // each pair once, i < j
                    const double d = haversine_km(lat[p], lon[p], lat[q], lon[q]);
                    if (d > radius_km) continue;
                    g.edges.push_back({static_cast<std::uint32_t>(p), q, std::exp(-d / sigma_geo_km)});
                }
            }
    }

    std::sort(g.edges.begin(), g.edges.end(), [](const GeoEdge& a, const GeoEdge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });

    g.degrees.assign(n, 0.0);
    for (const auto& e : g.edges) {
        g.degrees[e.i] += e.weight;
        g.degrees[e.j] += e.weight;
    }
    for (std::size_t p = 0; p < n; ++p)
        if (g.degrees[p] == 0.0) g.isolated_nodes++;
    return g;
}

namespace {
constexpr char kGraphMagic[4] = {'M', 'G', 'F', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated graph cache: " + path);
}
}  // namespace

void write_graph_cache(const std::string& path, const GeoGraph& g, std::uint64_t input_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write graph cache: " + path);
    out.write(kGraphMagic, 4);
    put(out, input_hash);
    put(out, static_cast<std::uint64_t>(g.n_pois));
    put(out, static_cast<std::uint64_t>(g.edges.size()));
    put(out, g.radius_km);
    put(out, g.sigma_geo_km);
    for (const auto& e : g.edges) {
        put(out, e.i);
        put(out, e.j);
        put(out, e.weight);
    }
    if (!out) throw IoError("failed writing graph cache: " + path);
}

GeoGraph read_graph_cache(const std::string& path, std::uint64_t* input_hash_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open graph cache: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kGraphMagic, 4) != 0)
        throw IoError("bad graph cache magic: " + path);
    std::uint64_t input_hash = 0, n = 0, m = 0;
    get(in, input_hash, path);
    get(in, n, path);
    get(in, m, path);
    GeoGraph g;
    g.n_pois = n;
    get(in, g.radius_km, path);
    get(in, g.sigma_geo_km, path);
    g.edges.resize(m);
    for (auto& e : g.edges) {
        get(in, e.i, path);
        get(in, e.j, path);
        get(in, e.weight, path);
    }
    g.degrees.assign(n, 0.0);
    for (const auto& e : g.edges) {
        g.degrees[e.i] += e.weight;
        g.degrees[e.j] += e.weight;
    }
    for (std::size_t p = 0; p < n; ++p)
        if (g.degrees[p] == 0.0) g.isolated_nodes++;
    if (input_hash_out) *input_hash_out = input_hash;
    return g;
}

}  // namespace magflow
