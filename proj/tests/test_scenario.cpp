#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spherecar/errors.hpp"
#include "spherecar/scenario.hpp"

using namespace spherecar;

namespace {

const char* kMinimal = R"({
  "geometry": {"rho": 1.0, "l": 0.1},
  "run": {"s_end": 1.0}
})";

std::string trackConfig(const std::string& initial, double sEnd = 5.0, int recordEvery = 10) {
  return R"({
    "geometry": {"rho": 1.0, "l": 0.1, "r": 0.02},
    "reference": {"kind": "great-circle", "axis": [0, 0, 1]},
    "initial": )" +
         initial + R"(,
    "run": {"s_end": )" +
         formatNumber(sEnd) + R"(, "record_every": )" + std::to_string(recordEvery) + R"(}
  })";
}

std::string observerConfig(double angle, const std::string& extra = "", double sEnd = 20.0) {
  return R"({
    "geometry": {"rho": 1.0, "l": 0.1, "r": 0.02},
    "reference": {"kind": "great-circle"},
    "observer": {"poles": [-1, -1, -1]},
    "estimate": {"angle": )" +
         formatNumber(angle) + R"(, "axis": [1, 1, 1]},
    )" + extra +
         R"(
    "run": {"s_end": )" +
         formatNumber(sEnd) + R"(, "record_every": 10}
  })";
}

std::vector<std::string> splitLine(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) {
    out.push_back(cell);
  }
  return out;
}

std::vector<std::string> keys(const nlohmann::ordered_json& j) {
  std::vector<std::string> out;
  for (const auto& [k, v] : j.items()) {
    out.push_back(k);
  }
  return out;
}

}  // namespace

TEST(LoadConfig, MinimalConfigGetsDefaults) {
  const ScenarioConfig c = parseConfig(kMinimal);
  EXPECT_EQ(c.integrator.method, IntegratorMethod::kRkmk4);
  EXPECT_EQ(c.integrator.step, 1e-3);
  EXPECT_EQ(c.reference.kind, ReferenceKind::kGreatCircle);
  EXPECT_EQ(c.gains.cSigma, 1.0);
  EXPECT_EQ(c.sEnd, 1.0);
  EXPECT_FALSE(c.observer.has_value());
}

TEST(LoadConfig, NegativeRadiusNamesField) {
  try {
    parseConfig(R"({"geometry": {"rho": -1, "l": 0.1}, "run": {"s_end": 1}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("geometry.rho"), std::string::npos) << e.what();
  }
}

TEST(LoadConfig, UnknownKeysAreRejected) {
  try {
    parseConfig(R"({"geometry": {"rho": 1, "l": 0.1, "wheel": 2}, "run": {"s_end": 1}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("geometry.wheel"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parseConfig(R"({"geometry": {"rho": 1, "l": 0.1}, "run": {"s_end": 1}, "x": 1})"),
               ConfigError);
}

TEST(LoadConfig, SyntaxErrorsReportLine) {
  try {
    parseConfig("{\n  \"geometry\": {\"rho\": 1,,}\n}");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(LoadConfig, NearSpherePositionIsNormalizedWithWarning) {
  std::vector<std::string> warnings;
  const ScenarioConfig c = parseConfig(R"({
    "geometry": {"rho": 2.0, "l": 0.1},
    "initial": {"position": [0, 0, 2.0000005], "heading": 0.3},
    "run": {"s_end": 1}
  })",
                                       &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NEAR(c.initial.position.norm(), 2.0, 1e-15);
  EXPECT_THROW(parseConfig(R"({
    "geometry": {"rho": 2.0, "l": 0.1},
    "initial": {"position": [0, 0, 2.1], "heading": 0.3},
    "run": {"s_end": 1}
  })"),
               ConfigError);
}

TEST(LoadConfig, MissingFileIsConfigError) {
  EXPECT_THROW(loadConfig("/nonexistent/scenario.json"), ConfigError);
}

TEST(RunTracking, ZeroInitialErrorStaysOnReference) {
  const RunResult r = runTracking(parseConfig(trackConfig(R"({"sigma": 0})", 2.0)));
  ASSERT_EQ(r.status, RunStatus::kCompleted) << r.message;
  for (const RunRecord& rec : r.records) {
    EXPECT_EQ(rec.speed, 1.0);
    EXPECT_LT(rec.sigma, 1e-12);
    EXPECT_EQ(rec.curvature, 0.0);
    EXPECT_EQ(rec.steering, 0.0);
  }
}

TEST(RunTracking, DecayRateMatchesGain) {
  const RunResult r = runTracking(parseConfig(trackConfig(R"({"sigma": 0.1, "delta": 0.6})")));
  ASSERT_EQ(r.status, RunStatus::kCompleted) << r.message;
  const double rate = r.summary["sigma_decay_rate"].get<double>();
  EXPECT_GE(rate, 0.999);
  EXPECT_LE(rate, 1.001);
  EXPECT_DOUBLE_EQ(rate, fitDecayRate(r.records));
}

TEST(RunTracking, LateralOffsetFollowsDeltaDynamics) {
  const RunResult r = runTracking(parseConfig(trackConfig(
      R"({"sigma": 0.2, "delta": 1.5707963267948966, "heading_offset": -0.5})", 5.0, 1)));
  ASSERT_EQ(r.status, RunStatus::kCompleted) << r.message;
  EXPECT_LT(r.summary["delta_ode_residual_max"].get<double>(), 1e-4);
  EXPECT_EQ(r.summary["secant_count"].get<int>(), 0);
}

TEST(RunTracking, SummaryKeys) {
  const RunResult r = runTracking(parseConfig(trackConfig(R"({"sigma": 0.1, "delta": 0.6})", 1.0)));
  const std::vector<std::string> expected{"mode",
                                          "status",
                                          "message",
                                          "s_end",
                                          "step",
                                          "records",
                                          "seed",
                                          "generator",
                                          "c_sigma",
                                          "sigma_initial",
                                          "sigma_final",
                                          "sigma_decay_rate",
                                          "delta_ode_residual_max",
                                          "fallback_count",
                                          "limit_count",
                                          "secant_count",
                                          "saturated_count"};
  EXPECT_EQ(keys(r.summary), expected);
  EXPECT_EQ(r.summary["generator"], kGeneratorName);
}

TEST(RunTracking, InfeasibilityStopsWithPartialOutput) {
  const RunResult r =
      runTracking(parseConfig(trackConfig(R"({"sigma": 0.1, "delta": 1.5707963267948966})")));
  EXPECT_EQ(r.status, RunStatus::kControllerFailure);
  EXPECT_EQ(exitCode(r.status), 2);
  EXPECT_FALSE(r.message.empty());
}

TEST(RunObserver, ZeroErrorEstimateEqualsTruth) {
  const RunResult r = runObserver(parseConfig(observerConfig(0.0)));
  ASSERT_EQ(r.status, RunStatus::kCompleted) << r.message;
  for (const RunRecord& rec : r.records) {
    ASSERT_TRUE(rec.observerError.has_value());
    EXPECT_LT(*rec.observerError, 1e-10);
  }
}

TEST(RunObserver, ConvergesAndReportsPoles) {
  const RunResult r = runObserver(parseConfig(observerConfig(0.05)));
  ASSERT_EQ(r.status, RunStatus::kCompleted) << r.message;
  EXPECT_TRUE(r.observing);
  ASSERT_FALSE(r.summary["convergence_station"].is_null());
  EXPECT_LE(r.summary["convergence_station"].get<double>(), 20.0);
  EXPECT_LT(r.summary["observer_error_final"].get<double>(), 1e-6);
  for (const auto& e : r.summary["eigenvalues"]) {
    EXPECT_NEAR(e[0].get<double>(), -1.0, 1e-10);
    EXPECT_NEAR(e[1].get<double>(), 0.0, 1e-10);
  }
}

TEST(RunObserver, LargeInitialErrorIsOutOfRegime) {
  const RunResult r = runObserver(parseConfig(observerConfig(1.0)));
  EXPECT_EQ(r.status, RunStatus::kOutOfRegime);
  EXPECT_EQ(exitCode(r.status), 3);
}

TEST(RunOutputFeedback, ExactEstimateReducesToTracking) {
  // Beyond s_d = 5 the error is small enough for the singularity policy to take over.
  const std::string extra = R"("initial": {"sigma": 0.05, "delta": 0.6},)";
  const ScenarioConfig c = parseConfig(observerConfig(0.0, extra, 5.0));
  const RunResult fb = runOutputFeedback(c);
  const RunResult tr = runTracking(c);
  ASSERT_EQ(fb.status, RunStatus::kCompleted) << fb.message;
  ASSERT_EQ(fb.records.size(), tr.records.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < fb.records.size(); ++k) {
    worst = std::max(worst, std::abs(fb.records[k].sigma - tr.records[k].sigma));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(RunOutputFeedback, SmallEstimateErrorConverges) {
  const RunResult r = runOutputFeedback(parseConfig(R"({
    "geometry": {"rho": 1.0, "l": 0.1, "r": 0.02},
    "controller": {"policy": {"saturate": true}},
    "observer": {"poles": [-2, [-1, 1], [-1, -1]]},
    "initial": {"sigma": 0.05, "delta": 0.6},
    "estimate": {"angle": 0.01},
    "run": {"s_end": 15.0, "record_every": 10, "seed": 7}
  })"));
  ASSERT_EQ(r.status, RunStatus::kCompleted) << r.message;
  EXPECT_TRUE(r.summary["experimental"].get<bool>());
  EXPECT_TRUE(r.summary["tracking_converged"].get<bool>());
}

TEST(RunOutputFeedback, LargeEstimateErrorIsOutOfRegime) {
  const std::string extra = R"("initial": {"sigma": 0.05, "delta": 0.6},)";
  const RunResult r = runOutputFeedback(parseConfig(observerConfig(1.0, extra)));
  EXPECT_EQ(r.status, RunStatus::kOutOfRegime);
}

TEST(EmitOutputs, EmptyRecordsGiveHeaderOnlyCsv) {
  std::ostringstream out;
  writeCsv(out, {}, true);
  const std::string text = out.str();
  ASSERT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  const auto header = splitLine(text.substr(0, text.size() - 1));
  EXPECT_EQ(header, csvHeader(true));
  EXPECT_EQ(header.front(), "s_d");
  EXPECT_EQ(header.size(), 1u + 9u + 9u + 3u + 6u);
  EXPECT_EQ(csvHeader(false).size(), 1u + 9u + 3u + 5u);
}

TEST(EmitOutputs, CsvRoundTripIsBitExact) {
  const RunResult r = runTracking(parseConfig(trackConfig(R"({"sigma": 0.1, "delta": 0.6})", 1.0)));
  std::ostringstream out;
  writeCsv(out, r.records, false);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  for (const RunRecord& rec : r.records) {
    ASSERT_TRUE(std::getline(in, line));
    const auto cells = splitLine(line);
    ASSERT_EQ(cells.size(), csvHeader(false).size());
    std::vector<double> v;
    for (const auto& c : cells) {
      v.push_back(std::strtod(c.c_str(), nullptr));
    }
    EXPECT_EQ(v[0], rec.station);
    // Independent reader: the emitted rows must be rotations.
    Eigen::Matrix3d g;
    g << v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9];
    EXPECT_EQ(g, rec.g.matrix());
    EXPECT_LT((g.transpose() * g - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(g.determinant(), 1.0, 1e-9);
    EXPECT_EQ(v[13], rec.sigma);
    EXPECT_EQ(v[14], rec.delta);
    EXPECT_EQ(v[15], rec.speed);
  }
}

TEST(EmitOutputs, FormatNumberRoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    EXPECT_EQ(std::strtod(formatNumber(x).c_str(), nullptr), x);
  }
}

TEST(EmitOutputs, WritesFilesAndRejectsBadDirectory) {
  const ScenarioConfig c = parseConfig(trackConfig(R"({"sigma": 0.1, "delta": 0.6})", 0.5));
  const RunResult r = runTracking(c);
  const auto dir = std::filesystem::temp_directory_path() / "spherecar_emit_test";
  std::filesystem::remove_all(dir);
  emitOutputs(r, c, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / c.csvName));
  std::ifstream summary(dir / c.summaryName);
  const auto parsed = nlohmann::ordered_json::parse(summary);
  EXPECT_EQ(parsed["mode"], "track");
  std::filesystem::remove_all(dir);
  EXPECT_THROW(emitOutputs(r, c, "/proc/spherecar_cannot_write"), ConfigError);
}

TEST(RunTracking, DeterministicForFixedSeed) {
  const ScenarioConfig c =
      parseConfig(observerConfig(0.02, R"("initial": {"sigma": 0.05, "delta": 0.6},)"));
  std::ostringstream a, b;
  writeCsv(a, runOutputFeedback(c).records, true);
  writeCsv(b, runOutputFeedback(c).records, true);
  EXPECT_EQ(a.str(), b.str());
}
