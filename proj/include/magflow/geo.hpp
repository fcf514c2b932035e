#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace magflow {

constexpr double kEarthRadiusKm = 6371.0;

/// Great-circle distance in km.
double haversine_km(double lat1, double lon1, double lat2, double lon2);

struct GeoEdge {
    std::uint32_t i = 0;  // i < j always
    std::uint32_t j = 0;
    double weight = 0.0;
};

/// Symmetric radius graph over POIs. Each undirected edge is stored once
/// with i < j; edge ids follow lexicographic (i, j) order.
struct GeoGraph {
    std::size_t n_pois = 0;
    double radius_km = 0.0;
    double sigma_geo_km = 0.0;
    std::vector<GeoEdge> edges;
    std::vector<double> degrees;  // d_i = sum_j W_ij
    std::size_t isolated_nodes = 0;

    std::size_t n_edges() const { return edges.size(); }

    /// Canonical edge id for an unordered pair, -1 when not an edge.
    std::int64_t edge_id(std::uint32_t a, std::uint32_t b) const;

    std::uint64_t content_hash() const;

  private:
    mutable std::unordered_map<std::uint64_t, std::size_t> edge_lookup_;
    mutable bool lookup_built_ = false;
    void build_lookup() const;
};

/// Edge iff 0 < d(i,j) <= radius_km, weight exp(-d/sigma). Coincident POIs
/// (d == 0, distinct ids) connect with weight 1. Uses a grid-bucket spatial
/// hash at cell size radius_km.
GeoGraph build_radius_graph(const std::vector<double>& lat, const std::vector<double>& lon,
                            double radius_km = 1.5, double sigma_geo_km = 1.0);

// Graph cache, magic MGF1. input_hash ties the file to its inputs.
void write_graph_cache(const std::string& path, const GeoGraph& g, std::uint64_t input_hash);
GeoGraph read_graph_cache(const std::string& path, std::uint64_t* input_hash_out = nullptr);

}  // namespace magflow
