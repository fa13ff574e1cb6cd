#pragma once

// Convenience umbrella: pulls in the whole library.

#include "mmfuse/common.hpp"
#include "mmfuse/sha256.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/labels.hpp"
#include "mmfuse/manifest.hpp"
#include "mmfuse/embedding.hpp"
#include "mmfuse/cache.hpp"
#include "mmfuse/encode.hpp"
#include "mmfuse/tensor.hpp"
#include "mmfuse/checkpoint.hpp"
#include "mmfuse/nn/mlp.hpp"
#include "mmfuse/nn/attention.hpp"
#include "mmfuse/nn/transformer.hpp"
#include "mmfuse/nn/bilstm.hpp"
#include "mmfuse/video.hpp"
#include "mmfuse/facial.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/train.hpp"
#include "mmfuse/synth.hpp"
#include "mmfuse/harness.hpp"
