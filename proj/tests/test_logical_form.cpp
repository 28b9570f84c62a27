#include <random>

#include "doctest.h"
#include "recall/errors.hpp"
#include "recall/logical_form.hpp"
#include "test_util.hpp"

using namespace recall;

TEST_CASE("parse_lf builds head-first preorder trees") {
  const LogicalForm call = parse_lf("(call f a)");
  REQUIRE(call.size() == 3);
  CHECK(call.root().label == "call");
  CHECK(call.node(call.root().children[0]).label == "f");
  CHECK(call.node(call.root().children[1]).label == "a");

  const LogicalForm atom = parse_lf("x");
  CHECK(atom.size() == 1);
  CHECK(atom.root().children.empty());

  const LogicalForm nested = parse_lf("(a (b c) d)");
  REQUIRE(nested.size() == 4);
  CHECK(nested.node(0).label == "a");
  CHECK(nested.node(1).label == "b");
  CHECK(nested.node(2).label == "c");
  CHECK(nested.node(3).label == "d");
  CHECK(nested.node(0).children == std::vector<int>{1, 3});
  CHECK(nested.node(1).children == std::vector<int>{2});
  CHECK(nested.node(2).parent == 1);
}

TEST_CASE("canonical text round trips") {
  CHECK(parse_lf("  ( a\t(b   c)\n d ) ").text() == "(a (b c) d)");
  CHECK(canonicalize("(a  b)") == "(a b)");
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const LogicalForm lf = testing::random_tree(rng, 1 + static_cast<int>(rng() % 12), 4);
    CHECK(parse_lf(lf.text()).text() == lf.text());
    for (const AstNode& n : lf.nodes())
      for (int c : n.children) CHECK(c > n.id);
  }
}

TEST_CASE("malformed expressions report a position") {
  for (const char* bad : {"", "   ", "(a b", "a)", "()", "((a) b)", "(a b))", "a b"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_lf(bad), MalformedLf);
  }
  try {
    parse_lf("(a (b c)");
    FAIL("expected MalformedLf");
  } catch (const MalformedLf& e) {
    CHECK(e.position() == 0);
  }
}

TEST_CASE("extract_triples") {
  const TripleSet one = extract_triples(parse_lf("x"));
  CHECK(one.instances == std::vector<InstanceTriple>{{0, "x"}});
  CHECK(one.relations.empty());

  const TripleSet edge = extract_triples(parse_lf("(a b)"));
  CHECK(edge.instances == std::vector<InstanceTriple>{{0, "a"}, {1, "b"}});
  CHECK(edge.relations == std::vector<RelationTriple>{{0, 0, 1}});

  const TripleSet t = extract_triples(parse_lf("(a (b c) d)"));
  CHECK(t.instances.size() == 4);
  std::set<RelationTriple> rel(t.relations.begin(), t.relations.end());
  CHECK(rel == std::set<RelationTriple>{{0, 0, 1}, {1, 0, 2}, {0, 1, 3}});
  CHECK(slot_name(1) == "arg1");

  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    const LogicalForm lf = testing::random_tree(rng, 1 + static_cast<int>(rng() % 15), 3);
    const TripleSet ts = extract_triples(lf);
    CHECK(ts.instances.size() == lf.size());
    CHECK(ts.relations.size() == lf.size() - 1);
  }
}
