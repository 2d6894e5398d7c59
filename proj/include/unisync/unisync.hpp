#pragma once

#include "unisync/adam.hpp"
#include "unisync/binary_io.hpp"
#include "unisync/config.hpp"
#include "unisync/error.hpp"
#include "unisync/graph.hpp"
#include "unisync/kernels.hpp"
#include "unisync/loss.hpp"
#include "unisync/metrics.hpp"
#include "unisync/model.hpp"
#include "unisync/representation.hpp"
#include "unisync/rng.hpp"
#include "unisync/sampler.hpp"
#include "unisync/synth.hpp"
#include "unisync/tensor.hpp"
#include "unisync/track_io.hpp"
#include "unisync/trainer.hpp"
