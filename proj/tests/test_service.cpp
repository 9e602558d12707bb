#include <doctest.h>

#include <thread>

// Eigen before httplib: resolv.h defines a macro named _res.
#include "support.hpp"
#include "vsa/service.hpp"

#include <httplib.h>

using namespace vsa;

namespace {

const std::vector<Snapshot>& ramp_snapshots() {
    static const std::vector<Snapshot> snaps = [] {
        ScenarioConfig c;
        c.case_path = vsa::test::case_path("case14.m");
        c.ramp = RampSpec{1.1, 1.3, 0.05};
        c.window = 3;
        c.noise_enabled = false;
        return run_scenario(c).snapshots;
    }();
    return snaps;
}

struct LiveServer {
    MonitoringService service;
    httplib::Server server;
    int port = 0;
    std::thread thread;

    explicit LiveServer(std::size_t publish_count) {
        const auto& snaps = ramp_snapshots();
        for (std::size_t i = 0; i < publish_count && i < snaps.size(); ++i) service.publish(snaps[i]);
        service.mount(server);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LiveServer() {
        service.stop();
        server.stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        return c;
    }
};

Json body_of(const httplib::Result& r) {
    REQUIRE(r);
    return Json::parse(r->body);
}

}  // namespace

TEST_CASE("latest report is the last published snapshot") {
    REQUIRE(ramp_snapshots().size() == 5);
    LiveServer live(5);
    auto cli = live.client();
    auto r = cli.Get("/api/report/latest");
    REQUIRE(r);
    CHECK(r->status == 200);
    const auto j = Json::parse(r->body);
    CHECK(j.at("snapshot") == ramp_snapshots()[4].id);
    CHECK(j.at("k").get<double>() == doctest::Approx(1.3));
    CHECK(j.at("threshold").get<double>() == 0.75);
    CHECK(j.at("report").contains("max_wvsi"));
    CHECK(j.at("alarm").get<bool>() == (j.at("report").at("max_wvsi").get<double>() > 0.75));
}

TEST_CASE("empty service answers 404 and history filters by id") {
    {
        LiveServer empty(0);
        auto cli = empty.client();
        CHECK(cli.Get("/api/report/latest")->status == 404);
        CHECK(cli.Get("/api/generators/critical")->status == 404);
    }
    LiveServer live(5);
    auto cli = live.client();
    const auto from = ramp_snapshots()[2].id;
    const auto j = body_of(cli.Get("/api/report/history?from=" + std::to_string(from)));
    REQUIRE(j.at("reports").size() == 3);
    CHECK(j.at("reports")[0].at("snapshot") == from);
    CHECK(cli.Get("/api/report/history?from=abc")->status == 400);
}

TEST_CASE("critical generator endpoint lists band members with limits") {
    LiveServer live(5);
    auto cli = live.client();
    const auto j = body_of(cli.Get("/api/generators/critical"));
    CHECK(j.at("band").get<double>() == doctest::Approx(0.01));
    for (const auto& g : j.at("generators")) {
        CHECK(g.contains("qmax"));
        CHECK(g.at("q_cr").get<double>() > j.at("q_total").get<double>());
    }
}

TEST_CASE("what-if results are cached per snapshot and branch") {
    LiveServer live(5);
    auto cli = live.client();
    const std::string req = R"({"branch": "5-6"})";
    const auto first = body_of(cli.Post("/api/whatif", req, "application/json"));
    CHECK_FALSE(first.at("cached").get<bool>());
    CHECK(first.at("verdict").at("label") == "5-6");
    const auto second = body_of(cli.Post("/api/whatif", req, "application/json"));
    CHECK(second.at("cached").get<bool>());
    CHECK(second.at("verdict").at("max_wvsi") == first.at("verdict").at("max_wvsi"));

    CHECK(cli.Post("/api/whatif", R"({"branch": "99-100"})", "application/json")->status == 400);
    CHECK(cli.Post("/api/whatif", "not json", "application/json")->status == 400);
    CHECK(cli.Post("/api/whatif", R"({"branch": "5-6", "snapshot": 9999})", "application/json")->status == 404);

    auto isl = cli.Post("/api/whatif", R"({"branch": "7-8"})", "application/json");
    REQUIRE(isl);
    CHECK(isl->status == 422);
    const auto ij = Json::parse(isl->body);
    CHECK(ij.at("error") == "islanding");
    CHECK(ij.at("buses") == Json::array({8}));
}

TEST_CASE("threshold update re-flags without changing the ranking") {
    LiveServer live(5);
    auto cli = live.client();
    const auto before = body_of(cli.Get("/api/contingencies/ranking"));
    auto put = cli.Put("/api/config/threshold", R"({"threshold": 0.85})", "application/json");
    REQUIRE(put);
    CHECK(put->status == 200);
    const auto after = body_of(cli.Get("/api/contingencies/ranking"));
    CHECK(after.at("threshold").get<double>() == 0.85);
    REQUIRE(before.at("verdicts").size() == after.at("verdicts").size());
    for (std::size_t i = 0; i < after.at("verdicts").size(); ++i) {
        const auto& v = after.at("verdicts")[i];
        CHECK(v.at("label") == before.at("verdicts")[i].at("label"));
        const bool expect = v.at("outcome") != "assessed" || v.at("max_wvsi").get<double>() > 0.85;
        CHECK(v.at("critical").get<bool>() == expect);
    }
    CHECK(cli.Put("/api/config/threshold", R"({"threshold": 3})", "application/json")->status == 400);
    CHECK(cli.Put("/api/config/threshold", R"({"value": 0.5})", "application/json")->status == 400);
    CHECK(live.service.threshold() == 0.85);
    CHECK(cli.Get("/api/contingencies/ranking?snapshot=x")->status == 400);
}

TEST_CASE("event stream delivers report events") {
    LiveServer live(5);
    auto cli = live.client();
    std::string received;
    cli.Get("/api/stream", [&](const char* data, std::size_t n) {
        received.append(data, n);
        return received.find("\n\n") == std::string::npos;
    });
    REQUIRE(received.rfind("event: report\n", 0) == 0);
    const auto id_line = "id: " + std::to_string(ramp_snapshots()[4].id) + "\n";
    CHECK(received.find(id_line) != std::string::npos);
    const auto data = received.substr(received.find("data: ") + 6);
    const auto j = Json::parse(data.substr(0, data.find('\n')));
    CHECK(j.at("snapshot") == ramp_snapshots()[4].id);
}

TEST_CASE("publishing requires increasing ids and a bounded pool refuses overflow") {
    MonitoringService s;
    const auto& snaps = ramp_snapshots();
    s.publish(snaps[1]);
    CHECK_THROWS_AS(s.publish(snaps[0]), ValidationError);
    CHECK_THROWS_AS(s.whatif(0, 9999), NotFoundError);

    WorkerPool pool(1, 1);
    std::promise<void> gate;
    auto hold = gate.get_future().share();
    CHECK(pool.submit([hold] { hold.wait(); }));
    // One running, one queued, then full.
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(pool.submit([] {}));
    CHECK_FALSE(pool.submit([] {}));
    gate.set_value();
}
