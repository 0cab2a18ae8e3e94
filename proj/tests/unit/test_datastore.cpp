#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "pasrec/datastore.hpp"

using namespace pasrec;
using namespace pasrec::data;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("pasrec_ds_" + name);
  std::ofstream(p) << body;
  return p;
}

RawEvent ev(const std::string& u, const std::string& i, std::int64_t day) { return {u, i, day * 86400}; }

// Removes one deficient user or item at a time until none remains.
std::set<std::pair<std::string, std::string>> core_oracle(std::vector<RawEvent> events, int k) {
  for (;;) {
    std::map<std::string, int> uc, ic;
    for (const auto& e : events) {
      ++uc[e.user_id];
      ++ic[e.item_id];
    }
    std::string drop_user, drop_item;
    for (const auto& [u, c] : uc) {
      if (c < k) {
        drop_user = u;
        break;
      }
    }
    if (drop_user.empty()) {
      for (const auto& [i, c] : ic) {
        if (c < k) {
          drop_item = i;
          break;
        }
      }
    }
    if (drop_user.empty() && drop_item.empty()) break;
    std::erase_if(events, [&](const RawEvent& e) { return e.user_id == drop_user || e.item_id == drop_item; });
  }
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& e : events) out.emplace(e.user_id, e.item_id);
  return out;
}

UserTimeline timeline(const std::string& user, std::vector<int> items) {
  UserTimeline t{user, std::move(items), {}};
  for (size_t i = 0; i < t.items.size(); ++i) t.times.push_back(static_cast<double>(i) / 20.0);
  return t;
}

}  // namespace

TEST_SUITE("datastore") {
  TEST_CASE("well-formed CSV loads in file order") {
    const auto p = write_temp("ok.csv", "u1,a,100\nu2,b,200\nu1,c,50\n");
    const auto r = load_events(p, LoadOptions{});
    REQUIRE(r.events.size() == 3);
    CHECK(r.rows == 3);
    CHECK(r.events[0] == RawEvent{"u1", "a", 100});
    CHECK(r.events[2] == RawEvent{"u1", "c", 50});
  }

  TEST_CASE("malformed rows are skipped or fatal per strict") {
    const auto p = write_temp("bad.csv", "user,item,ts\nu1,a,100\nu2,b,yesterday\nu3,c,300\n");
    LoadOptions opt;
    opt.header = true;
    const auto r = load_events(p, opt);
    CHECK(r.events.size() == 2);
    CHECK(r.skipped == 1);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("3") != std::string::npos);
    opt.strict = true;
    CHECK_THROWS_AS(load_events(p, opt), DataError);
    CHECK_THROWS_AS(load_events("/nonexistent/file.csv", LoadOptions{}), DataError);
  }

  TEST_CASE("tsv format and column remapping") {
    const auto p = write_temp("cols.tsv", "5\titem9\tuserA\t1000\n");
    LoadOptions opt = LoadOptions::from_format("tsv");
    opt.user_col = 2;
    opt.item_col = 1;
    opt.time_col = 3;
    const auto r = load_events(p, opt);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0] == RawEvent{"userA", "item9", 1000});
  }

  TEST_CASE("users below min_count are removed; min_count 1 is a no-op") {
    std::vector<RawEvent> events;
    for (int d = 0; d < 4; ++d) events.push_back(ev("short", "x", d));
    for (int d = 0; d < 5; ++d) events.push_back(ev("long", "x", d));
    for (int d = 0; d < 5; ++d) events.push_back(ev("long2", "x", d));
    const auto kept = filter_core(events, 5);
    for (const auto& e : kept) CHECK(e.user_id != "short");
    CHECK(kept.size() == 10);
    CHECK(filter_core(events, 1) == events);
    CHECK_THROWS_AS(filter_core(events, 11), DataError);
  }

  TEST_CASE("filter fixed point matches one-at-a-time removal on a toy log") {
    // Item f has one event; dropping it pushes u6 below 2, which in turn
    // leaves item e with a single event.
    std::vector<RawEvent> events{
        ev("u1", "a", 0), ev("u1", "b", 1), ev("u1", "c", 2), ev("u2", "a", 0), ev("u2", "b", 1),
        ev("u3", "b", 0), ev("u3", "c", 1), ev("u3", "d", 2), ev("u4", "c", 0), ev("u4", "d", 1),
        ev("u5", "a", 0), ev("u5", "d", 3), ev("u6", "e", 0), ev("u6", "f", 1), ev("u2", "e", 4),
    };
    const int k = 2;
    const auto kept = filter_core(events, k);
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& e : kept) got.emplace(e.user_id, e.item_id);
    CHECK(got == core_oracle(events, k));
    std::map<std::string, int> uc, ic;
    for (const auto& e : kept) {
      ++uc[e.user_id];
      ++ic[e.item_id];
    }
    for (const auto& [u, c] : uc) CHECK(c >= k);
    for (const auto& [i, c] : ic) CHECK(c >= k);
    CHECK_FALSE(uc.contains("u6"));
    CHECK_FALSE(ic.contains("e"));
  }

  TEST_CASE("filter output is chronological per user with stable ties") {
    std::vector<RawEvent> events{ev("u", "b", 5), ev("u", "a", 1), ev("u", "c", 5), ev("u", "d", 0)};
    const auto out = filter_core(events, 1);
    REQUIRE(out.size() == 4);
    CHECK(out[0].item_id == "d");
    CHECK(out[1].item_id == "a");
    CHECK(out[2].item_id == "b");
    CHECK(out[3].item_id == "c");
  }

  TEST_CASE("time normalization") {
    const std::int64_t day = 86400;
    auto one_day = normalize_times({{100, 200}, {day - 1}});
    for (const auto& u : one_day.times) {
      for (double t : u) CHECK(t == 0.0);
    }
    auto ends = normalize_times({{0, 10 * day}});
    CHECK(ends.times[0][0] == 0.0);
    CHECK(ends.times[0][1] == 1.0);
    auto five = normalize_times({{0, 3 * day + 5, 5 * day}, {5 * day + 100, 10 * day}});
    const std::vector<double> expect{0.0, 0.3, 0.5, 0.5, 1.0};
    std::vector<double> got;
    for (const auto& u : five.times) got.insert(got.end(), u.begin(), u.end());
    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-15));
    // Shift happens before scaling.
    auto shifted = normalize_times({{20 * day, 30 * day}});
    CHECK(shifted.min_day == 20);
    CHECK(shifted.day_span == 10);
    CHECK(shifted.times[0][1] == 1.0);
  }

  TEST_CASE("LOO on a three-event user") {
    Timelines tl;
    tl.users.push_back(timeline("u", {1, 2, 3}));
    const auto samples = build_sequences(tl, 10);
    const auto b = split(samples, SplitKind::LOO, 0);
    REQUIRE(b.test.size() == 1);
    REQUIRE(b.valid.size() == 1);
    CHECK(b.train.empty());
    CHECK(b.test[0].target_item == 3);
    CHECK(b.test[0].history_items[8] == 1);
    CHECK(b.test[0].history_items[9] == 2);
    CHECK(b.test[0].real_length() == 2);
    CHECK(b.valid[0].target_item == 2);
    CHECK(b.valid[0].history_items[9] == 1);
    CHECK(b.valid[0].real_length() == 1);
    for (int i = 0; i < 8; ++i) {
      CHECK(b.test[0].history_items[static_cast<size_t>(i)] == Vocab::kPadding);
      CHECK(b.test[0].history_mask[static_cast<size_t>(i)] == 0);
      CHECK(b.test[0].history_times[static_cast<size_t>(i)] == 0.0);
    }
  }

  TEST_CASE("long users use a sliding window of max_len") {
    Timelines tl;
    std::vector<int> items(12);
    for (int i = 0; i < 12; ++i) items[static_cast<size_t>(i)] = i + 1;
    tl.users.push_back(timeline("u", items));
    const auto b = split(build_sequences(tl, 10), SplitKind::LOO, 0);
    REQUIRE(b.test.size() == 1);
    for (int i = 0; i < 10; ++i) CHECK(b.test[0].history_items[static_cast<size_t>(i)] == i + 2);
    CHECK(b.test[0].target_item == 12);
    CHECK(b.train.size() == 9);
    for (const auto& s : b.train) {
      CHECK(s.target_item != Vocab::kPadding);
      CHECK(s.target_time >= s.last_time());
      for (size_t i = 0; i < s.history_mask.size(); ++i) CHECK((s.history_mask[i] != 0) == (s.history_items[i] != 0));
    }
  }

  TEST_CASE("single-event users are skipped") {
    Timelines tl;
    tl.users.push_back(timeline("solo", {4}));
    tl.users.push_back(timeline("pair", {1, 2}));
    const auto samples = build_sequences(tl, 5);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].user_id == "pair");
    CHECK_THROWS_AS(build_sequences(tl, 1), ConfigError);
  }

  TEST_CASE("Temporal811 ratio and determinism") {
    Timelines tl;
    tl.users.push_back(timeline("u", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}));
    const auto samples = build_sequences(tl, 4);
    REQUIRE(samples.size() == 10);
    const auto a = split(samples, SplitKind::Temporal811, 9);
    CHECK(a.train.size() == 8);
    CHECK(a.valid.size() == 1);
    CHECK(a.test.size() == 1);
    CHECK(split(samples, SplitKind::Temporal811, 9) == a);
    CHECK_THROWS_AS(split({}, SplitKind::LOO, 0), DataError);
  }

  TEST_CASE("LOO covers every multi-event user once in test") {
    std::vector<RawEvent> events;
    for (int u = 0; u < 6; ++u) {
      for (int d = 0; d <= u; ++d) events.push_back(ev("u" + std::to_string(u), "i" + std::to_string(d % 3), d));
    }
    const auto p = prepare(events, 1, 3, SplitKind::LOO, 1);
    std::map<std::string, int> tests;
    for (const auto& s : p.bundle.test) ++tests[s.user_id];
    CHECK(tests.size() == 5);
    for (const auto& [u, c] : tests) CHECK(c == 1);
    for (const auto& u : p.timelines.users) {
      for (size_t i = 0; i < u.times.size(); ++i) {
        CHECK(u.times[i] >= 0.0);
        CHECK(u.times[i] <= 1.0);
        if (i > 0) CHECK(u.times[i] >= u.times[i - 1]);
      }
    }
    CHECK(p.stats.users == 6);
    CHECK(p.stats.items == 3);
    CHECK(p.stats.actions == 21);
    CHECK(p.stats.sparsity == doctest::Approx(1.0 - 21.0 / 18.0));
  }

  TEST_CASE("vocab is a bijection onto 1..n and snapshots round-trip") {
    std::vector<RawEvent> events{ev("u", "b", 0), ev("u", "a", 1), ev("v", "b", 2), ev("v", "c", 3)};
    const auto p = prepare(events, 1, 4, SplitKind::Temporal811, 3);
    std::set<int> idx;
    for (const auto& item : {"a", "b", "c"}) idx.insert(p.vocab.index_of(item));
    CHECK(idx == std::set<int>{1, 2, 3});
    CHECK_FALSE(p.vocab.contains("<pad>"));
    CHECK_THROWS_AS(p.vocab.index_of("zzz"), DataError);
    const auto path = fs::temp_directory_path() / "pasrec_ds_snapshot.json";
    save_snapshot(p, path);
    const auto q = load_snapshot(path);
    CHECK(q.bundle == p.bundle);
    CHECK(q.vocab.hash() == p.vocab.hash());
    CHECK(q.timelines.day_span == p.timelines.day_span);
  }
}
