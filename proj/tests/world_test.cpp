// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "arlab/eval/metrics.hpp"
#include "arlab/world/decoder.hpp"
#include "arlab/world/encoder.hpp"

using namespace arlab;

namespace {

const std::vector<SyntheticImage>& calibration_images() {
  static const auto imgs = make_image_corpus(41, 500, 32);
  return imgs;
}

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

// Decoder trained once for the reconstruction tests: 200 images, d=64, 30 epochs.
struct TrainedDecoder {
  EncoderConfig enc;
  std::vector<SyntheticImage> images;
  LatentCorpus latents;
  DecoderParams untrained;
  DecoderParams trained;
  DecoderTrainReport report;
};

const TrainedDecoder& trained_decoder() {
  static const TrainedDecoder td = [] {
    TrainedDecoder t;
    t.enc = calibrate_profile("siglip2", make_encoder_config(64, 5), calibration_images());
    t.images = make_image_corpus(42, 200, 32);
    t.latents = encode_corpus(t.images, t.enc);
    DecoderConfig dc;
    dc.dim = 64;
    t.untrained = make_decoder(dc);
    t.trained = train_decoder(t.latents, t.images, dc, 30, 2e-3, &t.report);
    return t;
  }();
  return td;
}

}  // namespace

TEST(SynthImage, DeterministicAndSeedSensitive) {
  EXPECT_EQ(synth_image(1, 0, 32), synth_image(1, 0, 32));
  EXPECT_NE(synth_image(1, 0, 32), synth_image(2, 0, 32));
  EXPECT_THROW(synth_image(1, 8, 32), ContractError);
  EXPECT_THROW(synth_image(1, -1, 32), ContractError);
}

TEST(SynthImage, PixelRangeAndMean) {
  auto imgs = make_image_corpus(3, 1000, 32);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& img : imgs) {
    for (float v : img.pixels) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
      sum += v;
    }
    n += img.pixels.size();
  }
  const double mean = sum / static_cast<double>(n);
  EXPECT_GT(mean, 0.3);
  EXPECT_LT(mean, 0.7);
}

TEST(FrozenEncode, TokenCounts) {
  auto big = synth_image(1, 2, 256);
  EXPECT_EQ(frozen_encode(big, make_encoder_config(8, 1, 256, 16)).tokens(), 256);
  auto small = synth_image(1, 2, 32);
  auto g = frozen_encode(small, make_encoder_config(8, 1));
  EXPECT_EQ(g.tokens(), 16);
  EXPECT_EQ(g.side(), 4);
  EXPECT_EQ(g.dim(), 8);
}

TEST(FrozenEncode, PureFunction) {
  auto img = synth_image(9, 4, 32);
  auto cfg = make_encoder_config(16, 3);
  cfg.gain_spread = 0.4;
  EXPECT_EQ(frozen_encode(img, cfg), frozen_encode(img, cfg));
  FrozenEncoder enc(cfg);
  auto first = enc.encode(img);
  enc.encode(synth_image(10, 1, 32));
  EXPECT_EQ(enc.encode(img), first);
}

TEST(FrozenEncode, RejectsIndivisibleImages) {
  auto img = synth_image(1, 0, 30);
  EXPECT_THROW(frozen_encode(img, make_encoder_config(8, 1, 30, 8)), ContractError);
  auto cfg = make_encoder_config(8, 1);
  cfg.dim = 1;
  cfg.channel_offset.assign(1, 0.0);
  cfg.channel_scale.assign(1, 1.0);
  EXPECT_THROW(FrozenEncoder{cfg}, ContractError);
}

TEST(Calibration, UniformGainGivesZeroTokenVariance) {
  auto cfg = make_encoder_config(8, 2);
  cfg.gain_spread = 0.0;
  cfg.channel_scale.assign(8, 1.7);
  auto corpus = encode_corpus(std::span(calibration_images()).first(50), cfg);
  EXPECT_NEAR(summary_stats(corpus).c, 0.0, 1e-12);
}

TEST(Calibration, VaeProfileMatchesTargets) {
  auto res = calibrate_profile_detailed(profile_by_name("vae"), make_encoder_config(8, 2), calibration_images());
  EXPECT_LT(rel(res.achieved.a, 0.1889), 0.10);
  EXPECT_LT(rel(res.achieved.b, 1.2966), 0.10);
  EXPECT_LT(rel(res.achieved.c, 0.6158), 0.10);
  // the returned config reproduces the statistics when re-encoded
  auto again = summary_stats(encode_corpus(calibration_images(), res.config));
  EXPECT_NEAR(again.b, res.achieved.b, 1e-6);
}

TEST(Calibration, DinoAndMaeProfiles) {
  auto dino = calibrate_profile_detailed(profile_by_name("dinov2"), make_encoder_config(64, 2), calibration_images());
  EXPECT_LT(rel(dino.achieved.b, 1.3014), 0.10);
  EXPECT_LT(rel(dino.achieved.c, 0.0100), 0.10);
  auto mae = calibrate_profile_detailed(profile_by_name("mae"), make_encoder_config(64, 2), calibration_images());
  EXPECT_LT(rel(mae.achieved.a, -0.0025), 0.10);
  EXPECT_LT(rel(mae.achieved.b, 0.9503), 0.10);
  EXPECT_LT(rel(mae.achieved.c / 0.6158, 0.0858 / 0.6158), 0.10);
}

TEST(Calibration, PreservesTokenVarianceOrdering) {
  for (int d : {8, 64}) {
    std::map<std::string, double> c;
    for (const auto& p : known_profiles())
      c[p.name] = calibrate_profile_detailed(p, make_encoder_config(d, 4), calibration_images()).achieved.c;
    EXPECT_GT(c["va-vae"], c["vae"]);
    EXPECT_GT(c["vae"], c["siglip2"]);
    EXPECT_GE(c["siglip2"], c["mae"]);
    EXPECT_GT(c["mae"], c["dinov2"]);
  }
}

TEST(Calibration, SmallCorpusRejectedAndImpossibleTargetReported) {
  auto few = std::span(calibration_images()).first(100);
  EXPECT_THROW(calibrate_profile("vae", make_encoder_config(8, 2), few), ContractError);
  StatProfile bad{"bad", 0.0, 1.0, 1e6};
  EXPECT_THROW(calibrate_profile_detailed(bad, make_encoder_config(8, 2), calibration_images(), 0.005, 6),
               CalibrationError);
}

TEST(Decoder, ZeroEpochsReturnsInitialization) {
  auto imgs = make_image_corpus(7, 20, 32);
  auto lat = encode_corpus(imgs, make_encoder_config(8, 1));
  DecoderConfig dc;
  DecoderTrainReport rep;
  auto dec = train_decoder(lat, imgs, dc, 0, 1e-3, &rep);
  EXPECT_EQ(dec.params, make_decoder(dc).params);
  EXPECT_DOUBLE_EQ(rep.final_l1, rep.baseline_l1);
}

TEST(Decoder, DecodeIsDeterministicAndClamped) {
  DecoderConfig dc;
  auto dec = make_decoder(dc);
  LatentGrid zero(4, 8);
  auto a = decode(zero, dec);
  EXPECT_EQ(a, decode(zero, dec));
  for (float v : a.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(decode(LatentGrid(4, 16), dec), ContractError);
}

TEST(Decoder, TrainingHalvesL1) {
  const auto& td = trained_decoder();
  EXPECT_LT(td.report.final_l1, 0.5 * td.report.baseline_l1)
      << "baseline " << td.report.baseline_l1 << " final " << td.report.final_l1;
}

TEST(Decoder, SmoothedLossNonIncreasing) {
  const auto& ep = trained_decoder().report.epoch_loss;
  ASSERT_EQ(ep.size(), 30u);
  auto avg = [&](std::size_t i) { return (ep[i] + ep[i + 1] + ep[i + 2] + ep[i + 3] + ep[i + 4]) / 5.0; };
  for (std::size_t i = 0; i + 5 < ep.size(); ++i) EXPECT_LE(avg(i + 1), avg(i) * 1.001) << "window " << i;
}

TEST(Decoder, ReconstructionBeatsUntrainedByPsnr) {
  const auto& td = trained_decoder();
  double gain = 0.0;
  for (int i = 0; i < 10; ++i) {
    gain += psnr(decode(td.latents[i], td.trained), td.images[i]) - psnr(decode(td.latents[i], td.untrained), td.images[i]);
  }
  EXPECT_GE(gain / 10.0, 6.0);
}

TEST(Decoder, ReencodingStaysCloserThanNoise) {
  const auto& td = trained_decoder();
  FrozenEncoder enc(td.enc);
  Rng rng(5);
  double recon = 0.0, noise = 0.0;
  for (int i = 0; i < 10; ++i) {
    auto re = enc.encode(decode(td.latents[i], td.trained));
    SyntheticImage rnd = td.images[i];
    for (auto& v : rnd.pixels) v = static_cast<float>(rng.uniform());
    auto rn = enc.encode(rnd);
    for (std::size_t j = 0; j < re.data().size(); ++j) {
      recon += std::pow(re.data()[j] - td.latents[i].data()[j], 2);
      noise += std::pow(rn.data()[j] - td.latents[i].data()[j], 2);
    }
  }
  EXPECT_LT(recon, noise);
}
