#pragma once

// Umbrella header for the whole library.

#include "lcmt/checkpoint.hpp"
#include "lcmt/data_io.hpp"
#include "lcmt/decoding.hpp"
#include "lcmt/error.hpp"
#include "lcmt/evaluation.hpp"
#include "lcmt/extraction.hpp"
#include "lcmt/hash.hpp"
#include "lcmt/memory.hpp"
#include "lcmt/model.hpp"
#include "lcmt/rng.hpp"
#include "lcmt/span.hpp"
#include "lcmt/synthetic.hpp"
#include "lcmt/tensor.hpp"
#include "lcmt/train.hpp"
