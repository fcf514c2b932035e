#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "magflow/common.hpp"
#include "magflow/geo.hpp"

using namespace magflow;

namespace {

/// Quadratic reference builder; the production path uses a spatial hash.
GeoGraph brute_force_graph(const std::vector<double>& lat, const std::vector<double>& lon,
                           double radius_km, double sigma_km) {
    GeoGraph g;
    g.n_pois = lat.size();
    g.radius_km = radius_km;
    g.sigma_geo_km = sigma_km;
    for (std::uint32_t i = 0; i < lat.size(); ++i)
        for (std::uint32_t j = i + 1; j < lat.size(); ++j) {
            const double d = haversine_km(lat[i], lon[i], lat[j], lon[j]);
            if (d <= radius_km) g.edges.push_back({i, j, std::exp(-d / sigma_km)});
        }
    g.degrees.assign(lat.size(), 0.0);
    for (const auto& e : g.edges) {
        g.degrees[e.i] += e.weight;
        g.degrees[e.j] += e.weight;
    }
    return g;
}

void random_city(std::mt19937_64& rng, std::size_t n, std::vector<double>& lat,
                 std::vector<double>& lon, double span_deg = 0.05) {
    std::uniform_real_distribution<double> dlat(-span_deg, span_deg), dlon(-span_deg, span_deg);
    lat.resize(n);
    lon.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        lat[i] = 40.75 + dlat(rng);
        lon[i] = -73.98 + dlon(rng);
    }
}

}  // namespace

TEST_CASE("haversine basics") {
    CHECK(haversine_km(40.0, -74.0, 40.0, -74.0) == doctest::Approx(0.0));
    // Antipodal points: half the Earth's circumference.
    CHECK(haversine_km(0.0, 0.0, 0.0, 180.0) == doctest::Approx(20015.086796).epsilon(1e-9));
    CHECK(haversine_km(90.0, 0.0, -90.0, 0.0) == doctest::Approx(20015.086796).epsilon(1e-9));
    // Symmetry.
    CHECK(haversine_km(40.7580, -73.9855, 40.7484, -73.9857) ==
          doctest::Approx(haversine_km(40.7484, -73.9857, 40.7580, -73.9855)).epsilon(1e-15));
}

TEST_CASE("haversine matches an independently computed reference value") {
    // Times Square <-> Empire State Building, reference from a scratch
    // haversine in another language.
    const double d = haversine_km(40.7580, -73.9855, 40.7484, -73.9857);
    CHECK(d == doctest::Approx(1.0676042232386382).epsilon(1e-12));
}

TEST_CASE("radius graph: weight values and the radius cutoff") {
    // Three points on a meridian, 0.5 km apart (dlat = 0.5 km in degrees).
    const double dlat = 0.5 * 180.0 / (M_PI * kEarthRadiusKm);
    const std::vector<double> lat{10.0, 10.0 + dlat, 10.0 + 2 * dlat};
    const std::vector<double> lon{0.0, 0.0, 0.0};
    const GeoGraph g = build_radius_graph(lat, lon, 1.5, 1.0);
    REQUIRE(g.n_edges() == 3);
    // Canonical lexicographic ids: (0,1), (0,2), (1,2).
    CHECK(g.edges[0].i == 0);
    CHECK(g.edges[0].j == 1);
    CHECK(g.edges[1].i == 0);
    CHECK(g.edges[1].j == 2);
    CHECK(g.edges[2].i == 1);
    CHECK(g.edges[2].j == 2);
    CHECK(g.edges[0].weight == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
    CHECK(g.edges[1].weight == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
    CHECK(g.edges[2].weight == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
    // d == sigma gives weight e^{-1}.
    CHECK(g.edges[1].weight == doctest::Approx(0.367879441171).epsilon(1e-9));

    // 1.6 km with radius 1.5: no edge.
    const double dlat16 = 1.6 * 180.0 / (M_PI * kEarthRadiusKm);
    const GeoGraph far = build_radius_graph({10.0, 10.0 + dlat16}, {0.0, 0.0}, 1.5, 1.0);
    CHECK(far.n_edges() == 0);
    CHECK(far.isolated_nodes == 2);
}

TEST_CASE("coincident POIs connect with weight exactly 1") {
    const GeoGraph g = build_radius_graph({40.0, 40.0}, {-74.0, -74.0}, 1.5, 1.0);
    REQUIRE(g.n_edges() == 1);
    CHECK(g.edges[0].weight == 1.0);
}

TEST_CASE("spatial hash agrees with the brute-force oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 12; ++trial) {
        std::vector<double> lat, lon;
        random_city(rng, 40 + rng() % 160, lat, lon);
        const GeoGraph fast = build_radius_graph(lat, lon, 1.5, 1.0);
        const GeoGraph slow = brute_force_graph(lat, lon, 1.5, 1.0);
        REQUIRE(fast.n_edges() == slow.n_edges());
        for (std::size_t e = 0; e < fast.n_edges(); ++e) {
            CHECK(fast.edges[e].i == slow.edges[e].i);
            CHECK(fast.edges[e].j == slow.edges[e].j);
            CHECK(fast.edges[e].weight == doctest::Approx(slow.edges[e].weight).epsilon(1e-15));
        }
    }
}

TEST_CASE("dense W is symmetric with zero diagonal, weights bounded") {
    std::mt19937_64 rng(23);
    std::vector<double> lat, lon;
    random_city(rng, 50, lat, lon, 0.01);
    const GeoGraph g = build_radius_graph(lat, lon, 1.5, 1.0);
    std::vector<std::vector<double>> W(50, std::vector<double>(50, 0.0));
    for (const auto& e : g.edges) {
        W[e.i][e.j] = e.weight;
        W[e.j][e.i] = e.weight;
    }
    const double wmin = std::exp(-g.radius_km / g.sigma_geo_km);
    for (int i = 0; i < 50; ++i) {
        CHECK(W[i][i] == 0.0);
        for (int j = 0; j < 50; ++j) CHECK(W[i][j] == W[j][i]);
    }
    for (const auto& e : g.edges) {
        CHECK(e.weight >= wmin - 1e-12);
        CHECK(e.weight <= 1.0);
    }
}

TEST_CASE("edge ids are a stable bijection") {
    std::mt19937_64 rng(29);
    std::vector<double> lat, lon;
    random_city(rng, 80, lat, lon);
    const GeoGraph g1 = build_radius_graph(lat, lon, 1.5, 1.0);
    const GeoGraph g2 = build_radius_graph(lat, lon, 1.5, 1.0);
    std::set<std::int64_t> seen;
    for (const auto& e : g1.edges) {
        const auto id = g1.edge_id(e.i, e.j);
        REQUIRE(id >= 0);
        CHECK(id < static_cast<std::int64_t>(g1.n_edges()));
        CHECK(g1.edge_id(e.j, e.i) == id);  // unordered lookup
        seen.insert(id);
    }
    CHECK(seen.size() == g1.n_edges());
    CHECK(g1.content_hash() == g2.content_hash());
    CHECK(g1.edge_id(0, 0) == -1);
}

TEST_CASE("graph cache round-trips byte-identically") {
    std::mt19937_64 rng(31);
    std::vector<double> lat, lon;
    random_city(rng, 60, lat, lon);
    const GeoGraph g = build_radius_graph(lat, lon, 1.5, 1.0);
    const auto dir = std::filesystem::temp_directory_path();
    const auto p1 = (dir / "mf_graph1.mgf").string();
    const auto p2 = (dir / "mf_graph2.mgf").string();
    write_graph_cache(p1, g, 0xabcdef);

    std::uint64_t stored = 0;
    const GeoGraph r = read_graph_cache(p1, &stored);
    CHECK(stored == 0xabcdef);
    CHECK(r.n_pois == g.n_pois);
    REQUIRE(r.n_edges() == g.n_edges());
    for (std::size_t e = 0; e < g.n_edges(); ++e)
        CHECK(r.edges[e].weight == g.edges[e].weight);

    write_graph_cache(p2, r, stored);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    CHECK_THROWS_AS(read_graph_cache((dir / "mf_missing.mgf").string()), IoError);
}
