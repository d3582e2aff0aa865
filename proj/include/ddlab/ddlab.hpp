#pragma once

#include "ddlab/errors.hpp"
#include "ddlab/tensor.hpp"
#include "ddlab/ops.hpp"
#include "ddlab/checkpoint.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/tokenizer.hpp"
#include "ddlab/text_pipeline.hpp"
#include "ddlab/transformer.hpp"
#include "ddlab/ar_objective.hpp"
#include "ddlab/diffusion.hpp"
#include "ddlab/kv_config.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/trainer.hpp"
#include "ddlab/sweep.hpp"
#include "ddlab/analysis.hpp"
#include "ddlab/report.hpp"
