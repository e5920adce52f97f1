use qsoc::model::ControlProblem;

const QUBIT_JSON: &str = r#"{
    "dim": 2,
    "h0": [[[2.5, 0], [0, 0]], [[0, 0], [-2.5, 0]]],
    "controls": [[[[0, 0], [2.5, 0]], [[2.5, 0], [0, 0]]]],
    "channels": [
        {"matrix": [[[0, 0], [0, 0]], [[1, 0], [0, 0]]], "kind": "homodyne"}
    ],
    "control_set": {"type": "box", "lo": [-1.0], "hi": [1.0]},
    "cost": {
        "stage_terms": [
            {"coeff": 1.0, "powers": [0, 0, 0, 0, 0]},
            {"coeff": -1.0, "powers": [0, 1, 0, 0, 0]}
        ],
        "terminal_terms": []
    },
    "horizon": {"T": 5.0},
    "initial": {
        "atoms": [
            {"weight": 1.0, "state_matrix": [[[0, 0], [0, 0]], [[0, 0], [1, 0]]]}
        ]
    }
}"#;

fn main() {
    let problem = ControlProblem::from_json(QUBIT_JSON).unwrap();
    let ctx = qsoc::generator::GeneratorContext::from_problem(&problem).unwrap();
    let dyn_ = ctx.dynamics();
    for (i, p) in dyn_.drift.iter().enumerate() {
        println!("b{} = {}", i + 1, p);
    }
    for (l, g) in dyn_.diffusion.iter().enumerate() {
        for (i, p) in g.iter().enumerate() {
            println!("g{}[{}] = {}", l, i + 1, p);
        }
    }
    println!("purity = {}", problem.chart.purity_polynomial(&problem.vars));
}
