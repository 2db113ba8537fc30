#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include "cli/app.hpp"
#include "cli/config.hpp"
#include "json.hpp"
#include "lipscope/errors.hpp"

namespace lipscope::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lipscope_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }
  std::string small() {
    return write("small.cfg",
                 "family=transformer_dpa depth=2 width=8 heads=2\n"
                 "input_height=2 input_width=2\n"
                 "[estimator]\nbase_points=2\nperturbations=3\n"
                 "[sweep]\nexperiment=depth_residual\ngrid=1,2\nseeds=0\n"
                 "[optim]\nsteps=5\n");
  }

  fs::path dir_;
};

TEST(Config, HelpListsEveryKeyWithDefault) {
  const std::string help = config_help();
  for (const auto& k : config_keys()) {
    EXPECT_NE(help.find("[" + k.section + "]"), std::string::npos) << k.section;
    EXPECT_NE(help.find("    " + k.name + "=" + k.default_value()), std::string::npos) << k.name;
    EXPECT_NO_THROW(k.default_value());
  }
}

TEST(Config, OneLineFileIsPaperDefault) {
  Settings s;
  load_config_text("family=transformer_dpa depth=12 width=1024 heads=8\n", s);
  const NetworkSpec p = paper_default_spec(Family::TransformerDPA);
  EXPECT_EQ(s.net.family, p.family);
  EXPECT_EQ(s.net.depth, p.depth);
  EXPECT_EQ(s.net.width, p.width);
  EXPECT_EQ(s.net.heads, p.heads);
  EXPECT_EQ(s.net.tokens(), p.tokens());
}

TEST(Config, CanonicalFormIsAFixedPoint) {
  Settings a;
  load_config_text("depth=3 # comment\n[estimator]\nepsilon=1e-6\n[sweep]\ngrid=1,3\nnorms=l1,l2\n", a);
  const std::string once = serialize_config(a);
  Settings b;
  load_config_text(once, b);
  EXPECT_EQ(serialize_config(b), once);
  EXPECT_EQ(b.net.depth, 3u);
  EXPECT_EQ(b.estimator.epsilon, 1e-6);
  EXPECT_EQ(b.sweep.grid, (std::vector<double>{1, 3}));
}

TEST(Config, Rejections) {
  Settings s;
  EXPECT_THROW(load_config_text("[estimator]\nepsilon=0\n", s), ValidationError);
  try {
    Settings t;
    load_config_text("width=8\ndepth=abc\n", t);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos);
  }
  EXPECT_THROW(load_config_text("[network]\ndepht=3\n", s), ValidationError);
  EXPECT_THROW(load_config_text("[nowhere]\nx=1\n", s), ValidationError);
  Settings lenient;
  EXPECT_NO_THROW(load_config_text("[network]\ndepht=3\ndepth=5\n", lenient, true));
  EXPECT_EQ(lenient.net.depth, 5u);
}

TEST(Config, AmbiguousBareKey) {
  std::map<std::string, int> count;
  for (const auto& k : config_keys()) count[k.name]++;
  std::string shared;
  for (const auto& [name, n] : count)
    if (n > 1) shared = name;
  ASSERT_FALSE(shared.empty());
  Settings s;
  EXPECT_THROW(load_config_text(shared + "=1\n", s), ValidationError);
}

TEST(Config, Overrides) {
  Settings s;
  apply_override("network.depth=7", s);
  apply_override("heads=4", s);
  EXPECT_EQ(s.net.depth, 7u);
  EXPECT_EQ(s.net.heads, 4u);
  EXPECT_THROW(apply_override("depth", s), ValidationError);
}

TEST(Suggest, NearestWord) {
  EXPECT_EQ(nearest("estimte", subcommands()), "estimate");
  EXPECT_EQ(nearest("zzzzzzzzzz", subcommands()), "");
}

TEST_F(CliTest, HelpGoesToStdout) {
  const Result r = call({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_TRUE(r.err.empty());
  for (const auto& s : subcommands()) EXPECT_NE(r.out.find(s), std::string::npos);
  EXPECT_NE(r.out.find("[network]"), std::string::npos);
}

TEST_F(CliTest, TyposGetSuggestions) {
  Result r = call({"estimte"});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("did you mean 'estimate'"), std::string::npos) << r.err;
  r = call({"estimate", "--confg", "x"});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("did you mean '--config'"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingConfigWritesNothing) {
  const fs::path out = dir_ / "est.json";
  Result r = call({"estimate", "--out", out.string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_FALSE(fs::exists(out));
  r = call({"estimate", "--config", (dir_ / "absent.cfg").string(), "--out", out.string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, InvalidConfigExitsOne) {
  const std::string bad = write("bad.cfg", "[estimator]\nepsilon=0\n");
  Result r = call({"estimate", "--config", bad});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("epsilon"), std::string::npos);
  r = call({"estimate", "--config", bad, "--json-errors"});
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"]["kind"], "validation");
}

TEST_F(CliTest, EstimateSucceedsQuietly) {
  const Result r = call({"estimate", "--config", small()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(r.err.empty());
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["num_base_points"], 2);
  EXPECT_EQ(j["num_perturbations"], 3);
}

TEST_F(CliTest, BoundOfDpaIsInfinite) {
  const fs::path out = dir_ / "bound.json";
  const Result r = call({"bound", "--config", small(), "--out", out.string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("K_u = inf"), std::string::npos);
  EXPECT_NE(r.out.find("dpa_unbounded"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(read(out))["product"], "inf");
}

TEST_F(CliTest, SubcommandsAreReproducible) {
  const std::string cfg = small();
  const std::vector<std::vector<std::string>> cases = {
      {"estimate", "--config", cfg, "--seed", "3"},
      {"sweep", "--config", cfg},
      {"init-stats", "--set", "init_stats.rows=32", "--set", "init_stats.cols=48"},
      {"optim-sim", "--config", cfg},
      {"principles", "--config", cfg},
      {"jacobian-check", "--set", "jacobian.kind=LayerNorm", "--set", "dim=6"},
  };
  for (const auto& args : cases) {
    const Result a = call(args), b = call(args);
    EXPECT_EQ(a.code, kExitOk) << args[0] << ": " << a.err;
    EXPECT_FALSE(a.out.empty()) << args[0];
    EXPECT_EQ(a.out, b.out) << args[0];
  }
}

TEST_F(CliTest, SeedChangesTheEstimate) {
  const std::string cfg = small();
  EXPECT_NE(call({"estimate", "--config", cfg, "--seed", "1"}).out, call({"estimate", "--config", cfg, "--seed", "2"}).out);
}

TEST_F(CliTest, PrintConfigIsCanonical) {
  const Result r = call({"estimate", "--config", small(), "--print-config"});
  EXPECT_EQ(r.code, kExitOk);
  Settings s;
  load_config_text(r.out, s);
  EXPECT_EQ(serialize_config(s), r.out);
  EXPECT_EQ(s.net.width, 8u);
}

#ifdef LIPSCOPE_CLI_PATH
TEST_F(CliTest, BinaryExitCodes) {
  const std::string bin = LIPSCOPE_CLI_PATH;
  const fs::path out = dir_ / "o.txt";
  const std::string quiet = " > " + out.string() + " 2>&1";
  int rc = std::system((bin + " --help" + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 0);
  rc = std::system((bin + " estimate" + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 1);
  rc = std::system((bin + " bound --config " + small() + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 0);
  EXPECT_NE(read(out).find("K_u = inf"), std::string::npos);
}
#endif

}  // namespace
}  // namespace lipscope::cli
