// Copyright (c) 2026 The ParNet Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "parnet/cli.hpp"

namespace parnet {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "parnet");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("parnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& f) const { return (dir / f).string(); }
  static std::string config(const std::string& name) { return std::string(PARNET_CONFIG_DIR) + "/" + name; }

  fs::path dir;
};

TEST_F(CliTest, DescribeReportsDepth) {
  for (const char* c : {"parnet-s.json", "parnet-xl.json", "cifar-medium.json", "toy.json"}) {
    const CliRun r = cli({"describe", "--config", config(c)});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("depth 12\n"), std::string::npos) << c;
  }
  const CliRun s = cli({"describe", "--config", config("parnet-s.json")});
  EXPECT_NE(s.out.find("params_trainable 21019272"), std::string::npos);
  EXPECT_NE(s.out.find("stream1.down"), std::string::npos);
}

TEST_F(CliTest, InitFuseVerifyInfer) {
  ASSERT_EQ(cli({"init", "--config", config("toy.json"), "--seed", "3", "--randomized", "--out", path("t.pnw")}).code, 0);
  ASSERT_EQ(cli({"fuse", "--config", config("toy.json"), "--checkpoint", path("t.pnw"), "--out", path("f.pnw")}).code, 0);

  const CliRun v = cli({"verify", "--config", config("toy.json"), "--checkpoint", path("t.pnw"), "--fused-checkpoint",
                     path("f.pnw"), "--trials", "5"});
  EXPECT_EQ(v.code, 0) << v.err;
  EXPECT_EQ(v.out.rfind("PASS max_diff<1e-3 (max_diff=", 0), 0u) << v.out;

  RawTensor x{{1, 3, 32, 32}, std::vector<float>(3 * 32 * 32, 0.25f)};
  write_raw_tensor(path("x.bin"), x);
  const CliRun a = cli({"infer", "--config", config("toy.json"), "--checkpoint", path("t.pnw"), "--input", path("x.bin")});
  const CliRun b = cli({"infer", "--config", config("toy.json"), "--checkpoint", path("f.pnw"), "--input", path("x.bin"),
                     "--workers", "3"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(count_lines(a.out), 1);
  std::istringstream sa(a.out), sb(b.out);
  std::string ta, tb;
  while (std::getline(sa, ta, ',') && std::getline(sb, tb, ',')) EXPECT_NEAR(std::stod(ta), std::stod(tb), 1e-3);
}

TEST_F(CliTest, RawTensorRoundTrip) {
  const RawTensor t{{2, 3}, {1, 2, 3, 4, 5, 6}};
  write_raw_tensor(path("r.bin"), t);
  const RawTensor back = read_raw_tensor(path("r.bin"));
  EXPECT_EQ(back.dims, t.dims);
  EXPECT_EQ(back.data, t.data);
  fs::resize_file(path("r.bin"), 20);
  EXPECT_ANY_THROW(read_raw_tensor(path("r.bin")));
}

TEST_F(CliTest, BenchAppendsRows) {
  for (const char* w : {"1", "3"}) {
    const CliRun r = cli({"bench", "--config", config("toy.json"), "--workers", w, "--iters", "2", "--warmup", "0",
                       "--out", path("b.csv"), "--no-header"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  std::ifstream in(path("b.csv"));
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(header.rfind("mode,", 0), 0u);
  EXPECT_EQ(row1.rfind("sequential,", 0), 0u);
  EXPECT_EQ(row2.rfind("parallel-3,", 0), 0u);
}

TEST_F(CliTest, GradcheckCsv) {
  const CliRun r = cli({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("case,max_rel_error,coordinates,pass\n", 0), 0u);
  EXPECT_EQ(r.out.find(",false"), std::string::npos);
}

TEST_F(CliTest, ScaleEmitsLoadableConfig) {
  const CliRun r = cli({"scale", "--config", config("parnet-s.json"), "--streams", "2", "--width-mult", "1.5", "--out",
                     path("s2.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const CliRun d = cli({"describe", "--config", path("s2.json")});
  EXPECT_EQ(d.code, 0) << d.err;
  EXPECT_NE(d.out.find("streams 2\n"), std::string::npos);
  EXPECT_NE(d.out.find("depth 12\n"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"describe"}, {"nope"}, {"bench", "--config", config("toy.json"), "--workers", "0"}}) {
    const CliRun r = cli(args);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
    EXPECT_EQ(count_lines(r.err), 1);
  }
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, RuntimeErrorsAreOneLine) {
  ASSERT_EQ(cli({"init", "--config", config("parnet-s.json"), "--out", path("s.pnw")}).code, 0);
  const CliRun mismatch = cli({"verify", "--config", config("parnet-m.json"), "--checkpoint", path("s.pnw")});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_EQ(mismatch.err.rfind("error: checkpoint: dim-mismatch: ", 0), 0u) << mismatch.err;
  EXPECT_EQ(count_lines(mismatch.err), 1);

  std::ofstream(path("bad.json")) << R"({"variant": "S", "widths": 3})";
  const CliRun bad = cli({"describe", "--config", path("bad.json")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(bad.err.rfind("error: config: ", 0), 0u) << bad.err;

  const CliRun res = cli({"describe", "--config", config("parnet-s.json"), "--resolution", "30"});
  EXPECT_EQ(res.code, 1);
  EXPECT_EQ(res.err.rfind("error: config: ", 0), 0u) << res.err;
}

}  // namespace
}  // namespace parnet
