import numpy as np
import pytest

from app.core.errors import ExpressionSyntaxError, InputValidationError
from app.core.expression_parser import (
    BinOp, Call, Neg, Num, Var, evaluate, parse_dynamics, parse_expression, to_source, tokenize,
)


def value_of(text, x=(0.0,), u=(0.0,), t=0.0, n=1, m=1):
    return float(evaluate(parse_expression(text, n, m), t, np.array(x), np.array(u)))


class TestTokenizer:
    def test_numbers_names_and_operators(self):
        kinds = [token.kind for token in tokenize("2.5e-1*x1 + sin(t)")]
        assert kinds == ["number", "op", "name", "op", "name", "op", "name", "op", "end"]

    def test_positions_skip_whitespace(self):
        tokens = tokenize("  x1 +u1")
        assert [token.position for token in tokens] == [2, 5, 6, 8]

    def test_unexpected_character(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            tokenize("x1 $ u1")
        assert info.value.position == 3


class TestPrecedence:
    def test_multiplication_binds_tighter(self):
        assert value_of("1 + 2*3") == 7.0

    def test_power_is_right_associative(self):
        assert value_of("2^3^2") == 512.0

    def test_unary_minus_below_power(self):
        assert value_of("-2^2") == -4.0
        assert value_of("(-2)^2") == 4.0

    def test_subtraction_is_left_associative(self):
        assert value_of("10 - 4 - 3") == 3.0
        assert value_of("12/3/2") == 2.0

    def test_negative_exponent(self):
        assert value_of("2^-1") == 0.5

    def test_functions_and_variables(self):
        assert value_of("sin(t) + cos(x1) - exp(u1) + abs(-3)", x=(0.0,), u=(0.0,), t=0.0) == pytest.approx(3.0)

    def test_tree_shape(self):
        node = parse_expression("-x1^3 + u1", 1, 1)
        assert node == BinOp("+", Neg(BinOp("^", Var("x", 1), Num(3.0))), Var("u", 1))


class TestCanonicalPrinter:
    @pytest.mark.parametrize("text, expected", [
        ("(x1)+((u1))*2", "x1 + u1*2"),
        ("x1 - (u1 - t)", "x1 - (u1 - t)"),
        ("(x1 - u1) - t", "x1 - u1 - t"),
        ("(2^3)^2", "(2^3)^2"),
        ("2^(3^2)", "2^3^2"),
        ("-(x1 + u1)", "-(x1 + u1)"),
        ("sin( x2 )*0.5", "sin(x2)*0.5"),
    ])
    def test_canonical_text(self, text, expected):
        assert to_source(parse_expression(text, 2, 1)) == expected

    @pytest.mark.parametrize("text", [
        "x1 / (u1 * t)", "-x1^3 + u1", "exp(-t)*x2 - 1.5e-3", "2^-x1", "(x1 + x2)*(x1 - x2)",
    ])
    def test_printed_text_parses_to_same_tree(self, text):
        node = parse_expression(text, 2, 1)
        assert parse_expression(to_source(node), 2, 1) == node


class TestSyntaxErrors:
    def test_dangling_operator_reports_end_position(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("x1 +", 1, 1)
        assert info.value.position == 4
        assert "position 4" in info.value.message

    def test_variable_out_of_range(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("x1 + x3", 2, 1)
        assert info.value.position == 5

    def test_unknown_function(self):
        with pytest.raises(ExpressionSyntaxError, match="Unknown function"):
            parse_expression("tanh(x1)", 1, 1)

    def test_unknown_identifier(self):
        with pytest.raises(ExpressionSyntaxError, match="Unknown identifier"):
            parse_expression("y1 + 1", 1, 1)

    def test_arity(self):
        with pytest.raises(ExpressionSyntaxError, match="expects 1 argument"):
            parse_expression("sin(x1, u1)", 1, 1)

    def test_unbalanced_parenthesis(self):
        with pytest.raises(ExpressionSyntaxError, match="Expected"):
            parse_expression("(x1 + u1", 1, 1)

    def test_overflowing_literal(self):
        with pytest.raises(ExpressionSyntaxError, match="overflows"):
            parse_expression("1e999 * x1", 1, 1)

    def test_empty_expression(self):
        with pytest.raises(ExpressionSyntaxError, match="Empty"):
            parse_expression("   ", 1, 1)

    def test_syntax_error_is_input_validation_error(self):
        with pytest.raises(InputValidationError):
            parse_expression("x1 ** u1", 1, 1)


class TestParseDynamics:
    def test_semicolon_separated_components(self):
        expression = parse_dynamics("x2 + u1; -x1 + u2", 2, 2)
        assert expression.to_source() == ["x2 + u1", "-x1 + u2"]

    def test_error_position_is_offset_by_component(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_dynamics("x2 + u1; -x1 +* u2", 2, 2)
        assert info.value.position == 14
        assert info.value.details["component"] == 2

    def test_empty_source(self):
        with pytest.raises(InputValidationError):
            parse_dynamics(" ; ", 1, 1)

    def test_batched_evaluation(self):
        expression = parse_dynamics(["x2 + u1", "-x1*t + u2"], 2, 2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 5))
        u = rng.standard_normal((2, 5))
        t = np.linspace(0.0, 1.0, 5)
        values = expression.evaluate(t, x, u)
        assert values.shape == (2, 5)
        np.testing.assert_allclose(values[0], x[1] + u[0])
        np.testing.assert_allclose(values[1], -x[0] * t + u[1])

    def test_constant_component_broadcasts(self):
        values = parse_dynamics(["1", "u1"], 2, 1).evaluate(0.0, np.zeros((2, 3)), np.ones((1, 3)))
        np.testing.assert_array_equal(values, [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])

    def test_division_by_zero_is_not_raised(self):
        node = parse_expression("1/x1", 1, 1)
        assert np.isinf(evaluate(node, 0.0, np.array([0.0]), np.array([0.0])))

    def test_call_node(self):
        assert parse_expression("abs(u1)", 1, 1) == Call("abs", Var("u", 1))
