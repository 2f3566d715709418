#pragma once

#include "rada/errors.hpp"
#include "rada/tensor.hpp"
#include "rada/autodiff.hpp"
#include "rada/gradcheck.hpp"
#include "rada/parallel.hpp"
#include "rada/binary_io.hpp"
#include "rada/embedio.hpp"
#include "rada/rational.hpp"
#include "rada/adapter.hpp"
#include "rada/losses.hpp"
#include "rada/optim.hpp"
#include "rada/objectives.hpp"
#include "rada/trainer.hpp"
#include "rada/ttt.hpp"
#include "rada/infotheory.hpp"
