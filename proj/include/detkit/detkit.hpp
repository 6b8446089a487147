#pragma once

#include "assignment.hpp"
#include "bench.hpp"
#include "data_io.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "matrix.hpp"
#include "optimizer.hpp"
#include "postproc.hpp"
#include "rng.hpp"
