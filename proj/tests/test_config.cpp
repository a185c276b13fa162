#include "dvm/config.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace dvm;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const auto c = parse("# nothing here\n\n");
  EXPECT_EQ(c.height, 224u);
  EXPECT_EQ(c.width, 224u);
  EXPECT_EQ(c.solver.outer_iters, 30u);
  EXPECT_EQ(c.solver.inner_iters, 25u);
  EXPECT_EQ(c.solver.step_decay, 0.97);
  EXPECT_EQ(c.solver.weights.deform, 0.05);
  EXPECT_EQ(c.solver.weights.arap, 0.005);
  EXPECT_EQ(c.solver.weights.smooth, 0.5);
  EXPECT_EQ(c.solver.weights.geo, 0.02);
  EXPECT_EQ(c.solver.top_n, 10u);
  EXPECT_EQ(c.solver.mode, MatchMode::Full);
  EXPECT_EQ(c.laplacian_k, 8u);
}

TEST(Config, ParsesValuesAndComments) {
  const auto c = parse(
      "outer_iters = 4   # fewer rounds\n"
      "  lambda_geo=0\n"
      "mode = partial\n"
      "fd_check = yes\n"
      "height = 64\n"
      "normalization = shared\n"
      "arap_anneal_start = 1\n"
      "outer_iters = 5\n");
  EXPECT_EQ(c.solver.outer_iters, 5u);
  EXPECT_EQ(c.solver.weights.geo, 0.0);
  EXPECT_EQ(c.solver.mode, MatchMode::Partial);
  EXPECT_TRUE(c.solver.fd_check);
  EXPECT_EQ(c.height, 64u);
  EXPECT_EQ(c.width, 224u);
  EXPECT_EQ(c.normalization, Normalization::Shared);
  EXPECT_EQ(c.solver.arap_anneal_start, 1.0);
}

TEST(Config, UnknownKeySuggestsNearest) {
  const auto msg = error_of("seed = 1\nlamda_arap = 0.1\n");
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key 'lamda_arap'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("did you mean 'lambda_arap'"), std::string::npos) << msg;
  EXPECT_EQ(nearest_key("temprature"), "temperature");
  EXPECT_EQ(nearest_key("outer_iter"), "outer_iters");
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse("outer_iters = -3\n"), InvalidArgument);
  EXPECT_THROW(parse("outer_iters = 3.5\n"), InvalidArgument);
  EXPECT_THROW(parse("temperature = abc\n"), InvalidArgument);
  EXPECT_THROW(parse("temperature = inf\n"), InvalidArgument);
  EXPECT_THROW(parse("fd_check = maybe\n"), InvalidArgument);
  EXPECT_THROW(parse("mode = half\n"), InvalidArgument);
  EXPECT_THROW(parse("just a line\n"), InvalidArgument);
  EXPECT_THROW(parse("temperature = 0\n"), InvalidArgument);
  EXPECT_THROW(parse("lambda_smooth = -1\n"), InvalidArgument);
  EXPECT_THROW(parse("height = 0\n"), InvalidArgument);
  EXPECT_THROW(parse("step_decay = 1.5\n"), InvalidArgument);
  EXPECT_THROW(load_config("/nonexistent/dvm.cfg"), FormatError);
}

TEST(Config, DumpRoundTrips) {
  auto c = parse("temperature = 0.123456789\nk_skin = 3\nmode = partial\ncompute_geodesics = false\n");
  const auto text = dump_config(c);
  for (const auto& k : config_schema())
    EXPECT_NE(text.find(k.name + " = "), std::string::npos) << k.name;
  const auto back = parse(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.solver.temperature, 0.123456789);
  EXPECT_EQ(back.solver.graph.k_skin, 3u);
  EXPECT_FALSE(back.compute_geodesics);
}

TEST(Config, SchemaNamesAreUnique) {
  std::set<std::string> seen;
  for (const auto& k : config_schema()) EXPECT_TRUE(seen.insert(k.name).second) << k.name;
  EXPECT_GE(seen.size(), 30u);
}
