#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "ctxevo/errors.hpp"
#include "ctxevo/refine.hpp"
#include "helpers.hpp"

using namespace ctxevo;
using namespace ctxevo::testing;

namespace {

UnitPool conflict_pool() {
  UnitPool pool = make_pool(0);
  pool.add(ContextUnit::make(UnitKind::Insight, "always refund promptly", {},
                             {"refund: always"}));
  pool.add(ContextUnit::make(UnitKind::Insight, "never refund without id", {},
                             {"refund: never"}));
  pool.add(ContextUnit::make(UnitKind::Insight, "collect the booking code", {},
                             {"booking: code"}));
  pool.add(ContextUnit::make(UnitKind::Insight, "duplicate rule text", {}));
  pool.add(ContextUnit::make(UnitKind::Skill, "duplicate rule text ", {}));
  return pool;
}

}  // namespace

TEST_CASE("rules strategy drops exact duplicate texts") {
  UnitPool pool = make_pool(0);
  pool.add(ContextUnit::make(UnitKind::Insight, "rule body", {}));
  pool.add(ContextUnit::make(UnitKind::Skill, "rule body", {}));  // same text
  pool.add(ContextUnit::make(UnitKind::Insight, "different body", {}));
  const auto ids = pool_ids(pool);

  const auto result = refine_context(CandidateContext(ids, 10), pool,
                                     RefineStrategy::Rules);
  CHECK(result.context.size() == 2);
  CHECK(result.dropped_ids.size() == 1);
  CHECK(result.dropped_ids[0] == ids[1]);  // first occurrence kept
}

TEST_CASE("rules strategy drops the lower id of a conflicting pair") {
  const UnitPool pool = conflict_pool();
  const auto ids = pool_ids(pool);
  const std::string refund_always = ids[0], refund_never = ids[1];

  const auto result = refine_context(
      CandidateContext({refund_always, refund_never, ids[2]}, 10), pool,
      RefineStrategy::Rules);
  CHECK(result.context.size() == 2);
  REQUIRE(result.dropped_ids.size() == 1);
  CHECK(result.dropped_ids[0] == std::min(refund_always, refund_never));
  CHECK(result.context.contains(std::max(refund_always, refund_never)));
  CHECK(result.context.contains(ids[2]));
}

TEST_CASE("refinement never empties the context") {
  UnitPool pool = make_pool(0);
  pool.add(ContextUnit::make(UnitKind::Insight, "same text", {}));
  pool.add(ContextUnit::make(UnitKind::Skill, "same text", {}));
  const auto ids = pool_ids(pool);

  const auto result = refine_context(CandidateContext(ids, 10), pool,
                                     RefineStrategy::Rules);
  CHECK(result.context.size() == 1);
}

TEST_CASE("disabled strategy is the identity") {
  const UnitPool pool = conflict_pool();
  const auto ids = pool_ids(pool);
  const CandidateContext ctx(ids, 10);

  const auto result = refine_context(ctx, pool, RefineStrategy::Disabled);
  CHECK(result.context.ids() == ctx.ids());
  CHECK(result.dropped_ids.empty());
}

TEST_CASE("rules strategy is idempotent and subset-producing, fuzzed") {
  const UnitPool pool = conflict_pool();
  const auto ids = pool_ids(pool);
  Rng rng(17);

  for (int trial = 0; trial < 200; ++trial) {
    const auto idx = rng.sample_indices(ids.size(), 1 + rng.below(ids.size()));
    std::vector<std::string> ctx_ids;
    for (const auto i : idx) ctx_ids.push_back(ids[i]);
    const CandidateContext ctx(ctx_ids, 10);

    const auto once = refine_context(ctx, pool, RefineStrategy::Rules);
    CHECK(once.context.size() >= 1);
    for (const auto& id : once.context.ids()) CHECK(ctx.contains(id));

    const auto twice =
        refine_context(once.context, pool, RefineStrategy::Rules);
    CHECK(twice.context.ids() == once.context.ids());
  }
}

TEST_CASE("model strategy applies KEEP/DROP verdicts") {
  const UnitPool pool = conflict_pool();
  const auto ids = pool_ids(pool);

  StubScript script;
  script.default_response =
      "KEEP " + ids[0] + "\nDROP " + ids[2] + "\nKEEP " + ids[3];
  StubChatBackend refiner(script);

  const auto result =
      refine_context(CandidateContext({ids[0], ids[2], ids[3]}, 10), pool,
                     RefineStrategy::Model, &refiner);
  CHECK_FALSE(result.fell_back_to_rules);
  CHECK(result.context.ids() == std::vector<std::string>{ids[0], ids[3]});
  CHECK(result.dropped_ids == std::vector<std::string>{ids[2]});
}

TEST_CASE("model strategy falls back to rules on an unparseable response") {
  const UnitPool pool = conflict_pool();
  const auto ids = pool_ids(pool);

  StubScript script;
  script.default_response = "I am not sure what to say about these units.";
  StubChatBackend refiner(script);

  const auto result =
      refine_context(CandidateContext({ids[0], ids[1]}, 10), pool,
                     RefineStrategy::Model, &refiner);
  CHECK(result.fell_back_to_rules);
  CHECK(result.context.size() == 1);  // rules dropped the conflict
  CHECK_FALSE(result.warnings.empty());
}

TEST_CASE("model strategy cannot empty the context or inject units") {
  const UnitPool pool = conflict_pool();
  const auto ids = pool_ids(pool);

  StubScript script;
  script.default_response = "DROP " + ids[0] + "\nDROP " + ids[2] +
                            "\nKEEP src-imaginary-unit";
  StubChatBackend refiner(script);

  const auto result = refine_context(CandidateContext({ids[0], ids[2]}, 10),
                                     pool, RefineStrategy::Model, &refiner);
  CHECK(result.context.size() == 1);  // guard kept one unit
  for (const auto& id : result.context.ids()) {
    CHECK((id == ids[0] || id == ids[2]));
  }

  CHECK_THROWS_AS(refine_context(CandidateContext({ids[0]}, 10), pool,
                                 RefineStrategy::Model, nullptr),
                  UsageError);
}
