fn main() {
    let vars = ccclose::poly::vars_of(&["x","y"]);
    let ideal = ccclose::poly::MonomialIdeal::parse(&vars, "x^3, y^3").unwrap();
    let atlas = ccclose::newton::blowup_charts(&ideal).unwrap();
    for c in &atlas.charts {
        let x = c.pullback(&ccclose::poly::parse_poly("x", &vars).unwrap());
        let y = c.pullback(&ccclose::poly::parse_poly("y", &vars).unwrap());
        println!("chart {} rays {:?}: x->{} y->{} vertex {:?} ftilde {} , {}", c.id, c.ray_ids, x, y, c.e_generator.to_i64s(), c.f_tilde[0], c.f_tilde[1]);
    }
}
