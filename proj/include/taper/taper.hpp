#pragma once

// Umbrella header.

#include "taper/checkpoint.hpp"
#include "taper/config.hpp"
#include "taper/corpus.hpp"
#include "taper/encoder.hpp"
#include "taper/engine.hpp"
#include "taper/errors.hpp"
#include "taper/exec.hpp"
#include "taper/exiting.hpp"
#include "taper/flops.hpp"
#include "taper/gradcheck.hpp"
#include "taper/matrix.hpp"
#include "taper/model.hpp"
#include "taper/params.hpp"
#include "taper/pipeline.hpp"
#include "taper/pruning.hpp"
#include "taper/tape.hpp"
