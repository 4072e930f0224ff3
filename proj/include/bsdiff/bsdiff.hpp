#pragma once

#include "bsdiff/analytic.hpp"
#include "bsdiff/benchmark.hpp"
#include "bsdiff/bsde.hpp"
#include "bsdiff/config.hpp"
#include "bsdiff/errors.hpp"
#include "bsdiff/generation.hpp"
#include "bsdiff/io.hpp"
#include "bsdiff/mlp.hpp"
#include "bsdiff/parallel.hpp"
#include "bsdiff/pipeline.hpp"
#include "bsdiff/score_concept.hpp"
#include "bsdiff/score_model.hpp"
#include "bsdiff/sde.hpp"
#include "bsdiff/stats.hpp"
#include "bsdiff/stochastic.hpp"
#include "bsdiff/svg.hpp"
